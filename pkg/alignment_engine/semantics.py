"""
alignment_engine/semantics.py
=============================
Learnable textual parameters.

  l_n, l_a   base local embeddings (indiscriminate alignment targets)
  g_n, g_a   base global embeddings
  heads_c    Q affine maps per class: o_c^j = W_c^j l_c + b_c^j
  fuse_c     affine 2d -> d map:      g_bar_c = F_c [g_c; l_c] + f_c

The prompt-through-text-encoder stage is replaced by these directly
learnable d-vectors; heads and fusion are single affine layers.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from middleware.guards import ConfigError, ZeroNormError, check_finite

CLASSES = ("n", "a")


@dataclass(frozen=True)
class SubspaceModel:
    l_n: np.ndarray          # (d,)
    l_a: np.ndarray
    g_n: np.ndarray
    g_a: np.ndarray
    heads_n_w: np.ndarray    # (Q, d, d)
    heads_n_b: np.ndarray    # (Q, d)
    heads_a_w: np.ndarray
    heads_a_b: np.ndarray
    fuse_n_w: np.ndarray     # (d, 2d)
    fuse_n_b: np.ndarray     # (d,)
    fuse_a_w: np.ndarray
    fuse_a_b: np.ndarray

    @property
    def d(self) -> int:
        return self.l_n.shape[0]

    @property
    def n_subspaces(self) -> int:
        return self.heads_n_w.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        """Parameter groups by name, in a fixed order."""
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_parameters(self, params: dict[str, np.ndarray]) -> "SubspaceModel":
        return replace(self, **params)

    def validate(self) -> "SubspaceModel":
        for name, value in self.parameters().items():
            check_finite(f"SubspaceModel.{name}", value)
        if self.d < 2 or self.n_subspaces < 1:
            raise ConfigError(f"SubspaceModel: need d >= 2 and Q >= 1 (got d={self.d}, Q={self.n_subspaces}).")
        return self


PARAMETER_GROUPS = tuple(f.name for f in fields(SubspaceModel))


@dataclass(frozen=True)
class SubspaceBank:
    o_n: np.ndarray          # (Q, d)
    o_a: np.ndarray

    def for_class(self, c: str) -> np.ndarray:
        return self.o_n if c == "n" else self.o_a


def init_model(
    d: int,
    n_subspaces: int,
    seed: int = 0,
    head_noise: float = 0.1,
    fuse_noise: float = 0.1,
) -> SubspaceModel:
    """
    Seeded initialisation: unit-normalised Gaussian base embeddings,
    identity-plus-noise heads with zero offsets, and a fusion map that
    selects the global half [g_c; l_c] -> g_c plus noise.
    """
    if d < 2:
        raise ConfigError(f"init_model: d must be >= 2 (got {d}).")
    if n_subspaces < 1:
        raise ConfigError(f"init_model: Q must be >= 1 (got {n_subspaces}).")
    rng = np.random.default_rng(seed)

    def unit_vector() -> np.ndarray:
        x = rng.normal(0.0, 1.0 / np.sqrt(d), size=d)
        return x / np.linalg.norm(x)

    def heads() -> tuple[np.ndarray, np.ndarray]:
        w = np.eye(d)[None, :, :] + head_noise * rng.normal(size=(n_subspaces, d, d))
        return w, np.zeros((n_subspaces, d))

    def fusion() -> tuple[np.ndarray, np.ndarray]:
        selector = np.hstack([np.eye(d), np.zeros((d, d))])
        return selector + fuse_noise * rng.normal(size=(d, 2 * d)), np.zeros(d)

    l_n, l_a, g_n, g_a = unit_vector(), unit_vector(), unit_vector(), unit_vector()
    hn_w, hn_b = heads()
    ha_w, ha_b = heads()
    fn_w, fn_b = fusion()
    fa_w, fa_b = fusion()
    return SubspaceModel(
        l_n=l_n, l_a=l_a, g_n=g_n, g_a=g_a,
        heads_n_w=hn_w, heads_n_b=hn_b, heads_a_w=ha_w, heads_a_b=ha_b,
        fuse_n_w=fn_w, fuse_n_b=fn_b, fuse_a_w=fa_w, fuse_a_b=fa_b,
    )


def project_subspaces(model: SubspaceModel) -> SubspaceBank:
    """o_c^j = W_c^j l_c + b_c^j for every head j and class c."""
    o_n = np.einsum("qij,j->qi", model.heads_n_w, model.l_n) + model.heads_n_b
    o_a = np.einsum("qij,j->qi", model.heads_a_w, model.l_a) + model.heads_a_b
    for c, bank in (("n", o_n), ("a", o_a)):
        zero = np.flatnonzero(np.linalg.norm(bank, axis=1) == 0.0)
        if zero.size:
            raise ZeroNormError(
                f"project_subspaces: class '{c}' head {int(zero[0])} projects to the zero vector.",
                index=int(zero[0]),
                label=c,
            )
    return SubspaceBank(o_n=o_n, o_a=o_a)


def fuse_global_prompt(model: SubspaceModel) -> tuple[np.ndarray, np.ndarray]:
    """g_bar_c = F_c [g_c; l_c] + f_c."""
    g_bar_n = model.fuse_n_w @ np.concatenate([model.g_n, model.l_n]) + model.fuse_n_b
    g_bar_a = model.fuse_a_w @ np.concatenate([model.g_a, model.l_a]) + model.fuse_a_b
    return g_bar_n, g_bar_a


def _normalised_gram_residual(rows: np.ndarray, label: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(rows, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNormError(f"orthogonality_reg: class '{label}' row {int(zero[0])} has zero norm.",
                            index=int(zero[0]), label=label)
    unit = rows / norms[:, None]
    return unit, unit @ unit.T - np.eye(rows.shape[0])


def orthogonality_reg(bank: SubspaceBank) -> float:
    """Squared Frobenius distance of each class's normalised Gram matrix from I."""
    total = 0.0
    for c in CLASSES:
        _, residual = _normalised_gram_residual(bank.for_class(c), c)
        total += float(np.sum(residual ** 2))
    return total


def orthogonality_reg_grad(rows: np.ndarray, label: str = "") -> np.ndarray:
    """
    d/d rows of ||G - I||_F^2 with G the Gram of the unit-normalised rows.

    dL/dU = 4 (G - I) U, then back through u_j = o_j / ||o_j||.
    """
    unit, residual = _normalised_gram_residual(rows, label)
    d_unit = 4.0 * residual @ unit
    norms = np.linalg.norm(rows, axis=1)
    radial = np.sum(d_unit * unit, axis=1, keepdims=True)
    return (d_unit - radial * unit) / norms[:, None]
