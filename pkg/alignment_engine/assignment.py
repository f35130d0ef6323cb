"""
alignment_engine/assignment.py
==============================
From transport plans to anomaly maps.

Pipeline per image and per class c in {n, a}:
  plan T_c (N x Q)  ──sparsify_topk──▶  A_c (<= k nonzeros per row, rows sum to 1 or 0)
  A_c, sim_c        ──dynamic_logits──▶ z_c (N,)
  z_n, z_a          ──score_map_from_logits──▶ S_n, S_a (two-class softmax at temperature tau)

Thresholding and top-k act on row-normalised plan rows: with uniform
marginals every raw row sums to 1/N, so raw entries never reach a
threshold like 0.2. Ties keep the lowest subspace index, both for top-k
and for the argmax assignment.

Also here: the indiscriminate base map, the argmax ("Van") assignment,
pixel/image score fusion and the subspace-usage histogram.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from alignment_engine.transport import CostMatrix, SinkhornConfig, TransportPlan, cosine_matrix, sinkhorn
from middleware.guards import (
    ConfigError,
    EmptyInputError,
    ShapeMismatchError,
    check_nonzero_rows,
    check_same_shape,
)

DEFAULT_TAU = 0.07
DEFAULT_K = 2
DEFAULT_EPSILON = 0.2

Resolution = Literal["patch", "pixel"]
ImageScoreFormula = Literal["paper", "half_peak", "balanced"]
IMAGE_SCORE_FORMULAS = ("paper", "half_peak", "balanced")


@dataclass(frozen=True)
class AssignmentMatrix:
    weights: np.ndarray      # (N, Q)
    k: int
    epsilon: float

    @property
    def n_subspaces(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class AnomalyMap:
    scores: np.ndarray       # (h * w,) row-major
    h: int
    w: int
    resolution: Resolution = "patch"

    def __post_init__(self):
        if self.scores.size != self.h * self.w:
            raise ShapeMismatchError(
                f"AnomalyMap: {self.scores.size} scores do not fill a {self.h}x{self.w} layout."
            )

    def as_grid(self) -> np.ndarray:
        return self.scores.reshape(self.h, self.w)

    @classmethod
    def from_grid(cls, grid: np.ndarray, resolution: Resolution = "patch") -> "AnomalyMap":
        grid = np.asarray(grid, dtype=float)
        return cls(grid.ravel(), grid.shape[0], grid.shape[1], resolution)


@dataclass(frozen=True)
class SubspaceUsage:
    frequency: np.ndarray        # (Q,) fraction of rows whose support includes j
    argmax_share: np.ndarray     # (Q,) distribution of the per-row argmax
    normalized_entropy: float    # entropy(argmax_share) / log Q, 0 when Q == 1


def sparsify_topk(plan: TransportPlan | np.ndarray, k: int = DEFAULT_K, epsilon: float = DEFAULT_EPSILON) -> AssignmentMatrix:
    """Keep each row's top-k entries above epsilon, then renormalise the row."""
    if k < 1:
        raise ConfigError(f"sparsify_topk: k must be >= 1 (got {k}).")
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"sparsify_topk: epsilon must lie in [0, 1) (got {epsilon}).")
    t = plan.plan if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)

    row_sum = t.sum(axis=1, keepdims=True)
    rows = np.divide(t, row_sum, out=np.zeros_like(t), where=row_sum > 0)

    # stable sort on the negated row keeps the lowest index among ties
    order = np.argsort(-rows, axis=1, kind="stable")
    keep = np.zeros_like(rows, dtype=bool)
    np.put_along_axis(keep, order[:, :k], True, axis=1)
    keep &= rows > epsilon

    kept = np.where(keep, rows, 0.0)
    kept_sum = kept.sum(axis=1, keepdims=True)
    weights = np.divide(kept, kept_sum, out=np.zeros_like(kept), where=kept_sum > 0)
    return AssignmentMatrix(weights=weights, k=k, epsilon=epsilon)


def van_assignment(sim: np.ndarray) -> AssignmentMatrix:
    """One-hot at each row's highest similarity (first index on ties)."""
    sim = np.atleast_2d(np.asarray(sim, dtype=float))
    weights = np.zeros_like(sim)
    weights[np.arange(sim.shape[0]), np.argmax(sim, axis=1)] = 1.0
    return AssignmentMatrix(weights=weights, k=1, epsilon=0.0)


def dynamic_logits(
    assign_n: AssignmentMatrix,
    assign_a: AssignmentMatrix,
    sim_n: np.ndarray,
    sim_a: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """z_c^i = sum_j A_c^ij * sim_c(i, j). Empty rows give 0."""
    if assign_n.weights.shape != np.shape(sim_n) or assign_a.weights.shape != np.shape(sim_a):
        raise ShapeMismatchError("dynamic_logits: assignment and similarity shapes differ.")
    z_n = np.sum(assign_n.weights * sim_n, axis=1)
    z_a = np.sum(assign_a.weights * sim_a, axis=1)
    return z_n, z_a


def two_class_softmax(z_n: np.ndarray, z_a: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Max-shifted softmax over the pair (z_n / tau, z_a / tau)."""
    if not tau > 0:
        raise ConfigError(f"temperature must be > 0 (got {tau}).")
    ln = np.asarray(z_n, dtype=float) / tau
    la = np.asarray(z_a, dtype=float) / tau
    shift = np.maximum(ln, la)
    en = np.exp(ln - shift)
    ea = np.exp(la - shift)
    total = en + ea
    return en / total, ea / total


def score_map_from_logits(
    z_n: np.ndarray,
    z_a: np.ndarray,
    tau: float = DEFAULT_TAU,
    layout: tuple[int, int] | None = None,
) -> tuple[AnomalyMap, AnomalyMap]:
    check_same_shape("score_map_from_logits", np.asarray(z_n), np.asarray(z_a))
    s_n, s_a = two_class_softmax(z_n, z_a, tau)
    h, w = layout or (1, s_a.size)
    return AnomalyMap(s_n, h, w), AnomalyMap(s_a, h, w)


def base_score_map(tokens, l_n: np.ndarray, l_a: np.ndarray, tau: float = DEFAULT_TAU) -> tuple[AnomalyMap, AnomalyMap]:
    """
    Indiscriminate alignment: every token is scored against the same pair
    of local embeddings (l_n, l_a). Accepts a TokenGrid or an (N, d) array.
    """
    layout = None
    if hasattr(tokens, "tokens"):
        layout = (tokens.h, tokens.w)
        tokens = tokens.tokens
    tokens = np.atleast_2d(np.asarray(tokens, dtype=float))
    check_nonzero_rows("tokens", tokens)
    z_n = cosine_matrix(tokens, np.atleast_2d(l_n))[:, 0]
    z_a = cosine_matrix(tokens, np.atleast_2d(l_a))[:, 0]
    return score_map_from_logits(z_n, z_a, tau, layout)


def fuse_pixel_scores(s_da: AnomalyMap, s_base: AnomalyMap) -> AnomalyMap:
    """A_S = (S_a^da + S_a) / 2."""
    if (s_da.h, s_da.w) != (s_base.h, s_base.w):
        raise ShapeMismatchError(
            f"fuse_pixel_scores: layouts {s_da.h}x{s_da.w} and {s_base.h}x{s_base.w} differ."
        )
    return AnomalyMap(0.5 * (s_da.scores + s_base.scores), s_da.h, s_da.w, s_da.resolution)


def image_score(p_a_global: float, pixel_map: AnomalyMap, formula: ImageScoreFormula = "paper") -> float:
    """
    Image-level score from the global probability and the peak local score.

      paper     : (P_a + max(A_S) / 2) / 2   (tops out at 0.75; alias half_peak)
      balanced  : (P_a + max(A_S)) / 2
    """
    if pixel_map.scores.size == 0:
        raise EmptyInputError("image_score: empty anomaly map.")
    if not 0.0 <= p_a_global <= 1.0:
        raise ConfigError(f"image_score: global probability {p_a_global} outside [0, 1].")
    peak = float(np.max(pixel_map.scores))
    if formula in ("paper", "half_peak"):
        return 0.5 * (p_a_global + 0.5 * peak)
    if formula == "balanced":
        return 0.5 * (p_a_global + peak)
    raise ConfigError(f"image_score: unknown formula '{formula}'.")


def subspace_usage_histogram(assignment: AssignmentMatrix | np.ndarray) -> SubspaceUsage:
    weights = assignment.weights if isinstance(assignment, AssignmentMatrix) else np.asarray(assignment, dtype=float)
    weights = np.atleast_2d(weights)
    n_rows, q = weights.shape
    support = weights > 0
    frequency = support.sum(axis=0) / max(n_rows, 1)

    active = support.any(axis=1)
    counts = np.bincount(np.argmax(weights[active], axis=1), minlength=q).astype(float)
    argmax_share = counts / counts.sum() if counts.sum() > 0 else counts

    if q == 1 or counts.sum() == 0:
        entropy = 0.0
    else:
        nz = argmax_share[argmax_share > 0]
        entropy = float(-np.sum(nz * np.log(nz)) / np.log(q))
    return SubspaceUsage(frequency=frequency, argmax_share=argmax_share, normalized_entropy=entropy)


def assign_tokens(
    tokens: np.ndarray,
    subspaces: np.ndarray,
    mode: str = "ot",
    k: int = DEFAULT_K,
    epsilon: float = DEFAULT_EPSILON,
    sinkhorn_config: SinkhornConfig | None = None,
) -> tuple[np.ndarray, TransportPlan | None, AssignmentMatrix]:
    """
    Similarities, plan and sparse assignment of one class's subspaces.

    mode "ot" solves the entropic plan on the cosine cost and sparsifies it;
    mode "van" takes the argmax similarity and has no plan.
    """
    sim = cosine_matrix(tokens, subspaces)
    if mode == "van":
        return sim, None, van_assignment(sim)
    if mode != "ot":
        raise ConfigError(f"assign_tokens: unknown assignment mode '{mode}'.")
    plan = sinkhorn(CostMatrix(1.0 - sim), None, sinkhorn_config)
    return sim, plan, sparsify_topk(plan, k, epsilon)


def global_anomaly_probability(g_bar_n: np.ndarray, g_bar_a: np.ndarray, f: np.ndarray, tau: float = DEFAULT_TAU) -> float:
    """P_a: two-class softmax of cos(g_bar_c, f) / tau."""
    sims = cosine_matrix(np.atleast_2d(f), np.vstack([g_bar_n, g_bar_a]))[0]
    _, p_a = two_class_softmax(sims[:1], sims[1:], tau)
    return float(p_a[0])
