"""
alignment_engine/objective.py
=============================
Training objective, analytic gradients and their finite-difference check.

    L_total = L_base + L_da + L_global + eta * L_hinge + xi * L_reg

  L_base / L_da : Focal(Up([S_n, S_a]), S) + Dice(Up(S_a), S) + Dice(Up(S_n), 1 - S)
  L_global      : cross-entropy of softmax(cos(g_bar_c, f) / tau) against y
  L_hinge       : margin separation of dynamic scores on normal / anomalous pixels
  L_reg         : orthogonality of each class's normalised subspace rows

Gradient flow
-------------
The transport plan and the sparse assignment are constants of the forward
pass: gradients reach the parameters through the cosine similarities
(normalisation chain rule included), the two softmaxes, the upsampling,
the heads and the fusion maps, never through the Sinkhorn iterations.
forward() takes optional frozen assignments so finite differences can be
taken with the assignment held fixed on both sides.

Up(.) is align-corners bilinear interpolation written as Mh @ S @ Mw^T,
which makes its adjoint (Mh^T @ G @ Mw) exact.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from alignment_engine.assignment import (
    AnomalyMap,
    AssignmentMatrix,
    assign_tokens,
    dynamic_logits,
    two_class_softmax,
)
from alignment_engine.config import TrainConfig
from alignment_engine.semantics import (
    CLASSES,
    SubspaceBank,
    SubspaceModel,
    fuse_global_prompt,
    orthogonality_reg,
    orthogonality_reg_grad,
    project_subspaces,
)
from alignment_engine.transport import SinkhornConfig, TransportPlan, cosine_matrix
from data_io.samples import LabeledSample
from middleware.guards import (
    ConfigError,
    NonFiniteGradientError,
    ShapeMismatchError,
    ZeroNormError,
    check_nonzero_rows,
    check_same_shape,
)

LOSS_TERMS = ("l_base", "l_da", "l_global", "l_hinge", "l_reg")
PROB_FLOOR = 1e-12
FD_FLOOR = 1e-8


@dataclass(frozen=True)
class LossBreakdown:
    l_global: float = 0.0
    l_base: float = 0.0
    l_da: float = 0.0
    l_hinge: float = 0.0
    l_reg: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def value(self, term: str = "total") -> float:
        if term != "total" and term not in LOSS_TERMS:
            raise ConfigError(f"Unknown loss term '{term}'. Valid: total, {', '.join(LOSS_TERMS)}.")
        return getattr(self, term)

    @classmethod
    def mean(cls, items: list["LossBreakdown"]) -> "LossBreakdown":
        if not items:
            return cls()
        return cls(**{f.name: float(np.mean([getattr(b, f.name) for b in items])) for f in fields(cls)})


@dataclass(frozen=True)
class GradientSet:
    grads: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    @classmethod
    def zeros(cls, model: SubspaceModel) -> "GradientSet":
        return cls({name: np.zeros_like(value) for name, value in model.parameters().items()})

    def validate(self) -> "GradientSet":
        for name, g in self.grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
        return self

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet({k: factor * v for k, v in self.grads.items()})

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet({k: v + other.grads[k] for k, v in self.grads.items()})

    @classmethod
    def mean(cls, items: list["GradientSet"]) -> "GradientSet":
        return cls({k: np.mean([g.grads[k] for g in items], axis=0) for k in items[0].grads})


# ── Upsampling ────────────────────────────────────────────────────────────────

def interpolation_matrix(src: int, dst: int) -> np.ndarray:
    """(dst, src) align-corners linear interpolation weights; rows sum to 1."""
    if dst < src:
        raise ShapeMismatchError(f"bilinear_upsample: target {dst} is smaller than source {src}.")
    m = np.zeros((dst, src))
    if src == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(dst) * (src - 1) / (dst - 1)
    lo = np.minimum(np.floor(pos).astype(int), src - 1)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_upsample(grid: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    return interpolation_matrix(grid.shape[0], target_h) @ grid @ interpolation_matrix(grid.shape[1], target_w).T


@dataclass(frozen=True)
class _Upsampler:
    mh: np.ndarray
    mw: np.ndarray

    @classmethod
    def between(cls, patch_shape: tuple[int, int], pixel_shape: tuple[int, int]) -> "_Upsampler":
        return cls(interpolation_matrix(patch_shape[0], pixel_shape[0]),
                   interpolation_matrix(patch_shape[1], pixel_shape[1]))

    def up(self, grid: np.ndarray) -> np.ndarray:
        return self.mh @ grid @ self.mw.T

    def adjoint(self, pixel_grad: np.ndarray) -> np.ndarray:
        return self.mh.T @ pixel_grad @ self.mw


def _as_grid(x) -> np.ndarray:
    if isinstance(x, AnomalyMap):
        return x.as_grid()
    return np.atleast_2d(np.asarray(x, dtype=float))


# ── Pixel-level losses (value + gradient) ─────────────────────────────────────

def _focal_and_grad(p_n, p_a, mask, gamma):
    is_anom = mask > 0
    pt = np.where(is_anom, p_a, p_n)
    pt_safe = np.maximum(pt, PROB_FLOOR)
    one_minus = np.clip(1.0 - pt, 0.0, None)
    modulator = one_minus ** gamma
    log_pt = np.log(pt_safe)
    count = pt.size
    value = float(np.sum(-modulator * log_pt) / count)

    if gamma == 0:
        d_mod = np.zeros_like(pt)
    else:
        base = one_minus if gamma >= 1 else np.maximum(one_minus, PROB_FLOOR)
        d_mod = -gamma * base ** (gamma - 1.0)
    d_pt = (-d_mod * log_pt - modulator * (pt > PROB_FLOOR) / pt_safe) / count
    return value, np.where(is_anom, 0.0, d_pt), np.where(is_anom, d_pt, 0.0)


def _dice_and_grad(s, target, smooth):
    inter = 2.0 * np.sum(s * target) + smooth
    union = np.sum(s) + np.sum(target) + smooth
    value = float(1.0 - inter / union)
    grad = -(2.0 * target * union - inter) / union ** 2
    return value, grad


def _local_and_grad(s_n, s_a, mask, gamma, smooth, ups: _Upsampler):
    """Focal + two Dice terms on upsampled maps; gradients back at patch level."""
    p_n, p_a = ups.up(s_n), ups.up(s_a)
    target = (mask > 0).astype(float)
    focal, g_pn, g_pa = _focal_and_grad(p_n, p_a, mask, gamma)
    dice_a, g_da = _dice_and_grad(p_a, target, smooth)
    dice_n, g_dn = _dice_and_grad(p_n, 1.0 - target, smooth)
    value = focal + dice_a + dice_n
    return value, ups.adjoint(g_pn + g_dn), ups.adjoint(g_pa + g_da)


def _hinge_and_grad(s_n, s_a, mask, delta_minus, delta_plus, literal, ups: _Upsampler):
    p_n, p_a = ups.up(s_n), ups.up(s_a)
    normal = mask <= 0
    anomalous = ~normal
    g_pn = np.zeros_like(p_n)
    g_pa = np.zeros_like(p_a)
    value = 0.0

    n_normal = int(normal.sum())
    if n_normal:
        watched, g_watched = (p_n, g_pn) if literal else (p_a, g_pa)
        excess = watched - delta_minus
        value += float(np.sum(np.maximum(excess, 0.0)[normal]) / n_normal)
        g_watched[normal & (excess > 0)] = 1.0 / n_normal

    n_anom = int(anomalous.sum())
    if n_anom:
        shortfall = delta_plus - p_a
        value += float(np.sum(np.maximum(shortfall, 0.0)[anomalous]) / n_anom)
        g_pa[anomalous & (shortfall > 0)] -= 1.0 / n_anom

    return value, ups.adjoint(g_pn), ups.adjoint(g_pa)


def _cosine_target_grad(unit_rows: np.ndarray, targets: np.ndarray, sim: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """
    d/d targets of sum_ij upstream_ij * cos(row_i, target_j).

    d cos_ij / d t_j = (r_hat_i - cos_ij t_hat_j) / ||t_j||
    """
    norms = np.linalg.norm(targets, axis=1)
    t_hat = targets / norms[:, None]
    return (upstream.T @ unit_rows - np.sum(upstream * sim, axis=0)[:, None] * t_hat) / norms[:, None]


def _global_and_grad(g_bar_n, g_bar_a, f, y, tau):
    f = np.asarray(f, dtype=float)
    targets = np.vstack([g_bar_n, g_bar_a])
    if np.linalg.norm(f) == 0.0:
        raise ZeroNormError("global_loss: image embedding has zero norm.", label="f")
    check_nonzero_rows("global prompts", targets)
    f_hat = (f / np.linalg.norm(f))[None, :]
    sims = cosine_matrix(f[None, :], targets)          # (1, 2)
    logits = sims[0] / tau
    lse = logsumexp(logits)
    value = float(lse - logits[int(y)])
    probs = np.exp(logits - lse)
    d_sims = (probs - np.eye(2)[int(y)]) / tau
    d_targets = _cosine_target_grad(f_hat, targets, sims, d_sims[None, :])
    return value, d_targets[0], d_targets[1]


# ── Public loss functions ─────────────────────────────────────────────────────

def focal_loss(s_n, s_a, mask, gamma: float = 2.0) -> float:
    """Mean of -(1 - p_t)^gamma log p_t; p_t is S_a on anomalous and S_n on normal pixels."""
    s_n, s_a, mask = _as_grid(s_n), _as_grid(s_a), np.asarray(mask)
    check_same_shape("focal_loss", s_n, s_a)
    check_same_shape("focal_loss", s_a, mask)
    value, _, _ = _focal_and_grad(s_n, s_a, mask, gamma)
    return value


def dice_loss(s, target, smooth: float = 1.0) -> float:
    s, target = _as_grid(s), np.asarray(target, dtype=float)
    check_same_shape("dice_loss", s, target)
    value, _ = _dice_and_grad(s, target, smooth)
    return value


def base_local_loss(s_n, s_a, mask, gamma: float = 2.0, smooth: float = 1.0) -> float:
    """Patch-level maps are upsampled to the mask before the three terms."""
    s_n, s_a, mask = _as_grid(s_n), _as_grid(s_a), np.asarray(mask)
    check_same_shape("base_local_loss", s_n, s_a)
    ups = _Upsampler.between(s_a.shape, mask.shape)
    value, _, _ = _local_and_grad(s_n, s_a, mask, gamma, smooth, ups)
    return value


def da_local_loss(s_n_da, s_a_da, mask, gamma: float = 2.0, smooth: float = 1.0) -> float:
    return base_local_loss(s_n_da, s_a_da, mask, gamma, smooth)


def global_loss(g_bar_n, g_bar_a, f, y: int, tau: float = 0.07) -> float:
    value, _, _ = _global_and_grad(g_bar_n, g_bar_a, f, y, tau)
    return value


def hinge_loss(s_n_da, s_a_da, mask, delta_minus: float = 0.5, delta_plus: float = 0.5, literal: bool = False) -> float:
    """
    corrected (default): mean_normal max(S_a - d-, 0) + mean_anom max(d+ - S_a, 0)
    literal            : mean_normal max(S_n - d-, 0) + mean_anom max(d+ - S_a, 0)
    """
    s_n, s_a, mask = _as_grid(s_n_da), _as_grid(s_a_da), np.asarray(mask)
    check_same_shape("hinge_loss", s_n, s_a)
    ups = _Upsampler.between(s_a.shape, mask.shape)
    value, _, _ = _hinge_and_grad(s_n, s_a, mask, delta_minus, delta_plus, literal, ups)
    return value


def total_loss(parts: dict[str, float], cfg: TrainConfig) -> LossBreakdown:
    values = {term: float(parts.get(term, 0.0)) for term in LOSS_TERMS}
    total = values["l_base"] + values["l_da"] + values["l_global"] + cfg.eta * values["l_hinge"] + cfg.xi * values["l_reg"]
    return LossBreakdown(total=total, **values)


# ── Forward / backward ────────────────────────────────────────────────────────

@dataclass
class ForwardCache:
    unit_tokens: np.ndarray
    ups: _Upsampler
    g_bar: dict[str, np.ndarray] = field(default_factory=dict)
    d_g_bar: dict[str, np.ndarray] = field(default_factory=dict)
    # base branch
    z_base: dict[str, np.ndarray] = field(default_factory=dict)
    s_base: tuple[np.ndarray, np.ndarray] | None = None
    g_base: tuple[np.ndarray, np.ndarray] | None = None
    # dynamic branch
    bank: Optional[SubspaceBank] = None
    sims: dict[str, np.ndarray] = field(default_factory=dict)
    plans: dict[str, Optional[TransportPlan]] = field(default_factory=dict)
    assignments: dict[str, AssignmentMatrix] = field(default_factory=dict)
    s_da: tuple[np.ndarray, np.ndarray] | None = None
    g_da: tuple[np.ndarray, np.ndarray] | None = None
    g_hinge: tuple[np.ndarray, np.ndarray] | None = None


def _sinkhorn_config(cfg: TrainConfig) -> SinkhornConfig:
    return SinkhornConfig(lam=cfg.sinkhorn_lambda, max_iters=cfg.sinkhorn_iters, tol=cfg.sinkhorn_tol,
                          refine_steps=cfg.sinkhorn_refine_steps)


def global_prompts(model: SubspaceModel, cfg: TrainConfig) -> dict[str, np.ndarray]:
    """Fused global prompts, or the shared local embeddings when not decoupled."""
    if cfg.decouple_global:
        g_bar_n, g_bar_a = fuse_global_prompt(model)
        return {"n": g_bar_n, "a": g_bar_a}
    return {"n": model.l_n, "a": model.l_a}


def compute_assignments(
    tokens: np.ndarray,
    bank: SubspaceBank,
    cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], dict[str, Optional[TransportPlan]], dict[str, AssignmentMatrix]]:
    sims, plans, assignments = {}, {}, {}
    for c in CLASSES:
        sims[c], plans[c], assignments[c] = assign_tokens(
            tokens, bank.for_class(c), cfg.assignment, cfg.k, cfg.epsilon, _sinkhorn_config(cfg)
        )
    return sims, plans, assignments


def forward(
    model: SubspaceModel,
    sample: LabeledSample,
    cfg: TrainConfig,
    assignments: dict[str, AssignmentMatrix] | None = None,
) -> tuple[LossBreakdown, ForwardCache]:
    """
    Evaluate every loss term for one sample.

    Passing `assignments` freezes the sparse assignment (no Sinkhorn solve);
    otherwise it is recomputed from the current subspaces.
    """
    grid = sample.grid
    tokens = grid.tokens
    norms = check_nonzero_rows("tokens", tokens)
    mask = np.asarray(sample.mask)
    patch_shape = (grid.h, grid.w)
    cache = ForwardCache(unit_tokens=tokens / norms[:, None], ups=_Upsampler.between(patch_shape, mask.shape))
    parts: dict[str, float] = {}

    cache.g_bar = global_prompts(model, cfg)
    parts["l_global"], d_n, d_a = _global_and_grad(cache.g_bar["n"], cache.g_bar["a"], grid.image_embedding(), sample.label, cfg.tau)
    cache.d_g_bar = {"n": d_n, "a": d_a}

    if cfg.use_base:
        for c, l_c in (("n", model.l_n), ("a", model.l_a)):
            cache.z_base[c] = cosine_matrix(tokens, l_c[None, :])[:, 0]
        s_n, s_a = two_class_softmax(cache.z_base["n"], cache.z_base["a"], cfg.tau)
        cache.s_base = (s_n, s_a)
        parts["l_base"], g_sn, g_sa = _local_and_grad(
            s_n.reshape(patch_shape), s_a.reshape(patch_shape), mask, cfg.gamma_focal, cfg.dice_smooth, cache.ups
        )
        cache.g_base = (g_sn.ravel(), g_sa.ravel())

    if cfg.use_dynamic:
        cache.bank = project_subspaces(model)
        if assignments is None:
            cache.sims, cache.plans, cache.assignments = compute_assignments(tokens, cache.bank, cfg)
        else:
            cache.sims = {c: cosine_matrix(tokens, cache.bank.for_class(c)) for c in CLASSES}
            cache.assignments = dict(assignments)
        z_n, z_a = dynamic_logits(cache.assignments["n"], cache.assignments["a"], cache.sims["n"], cache.sims["a"])
        s_n, s_a = two_class_softmax(z_n, z_a, cfg.tau)
        cache.s_da = (s_n, s_a)
        grid_n, grid_a = s_n.reshape(patch_shape), s_a.reshape(patch_shape)
        parts["l_da"], g_sn, g_sa = _local_and_grad(grid_n, grid_a, mask, cfg.gamma_focal, cfg.dice_smooth, cache.ups)
        cache.g_da = (g_sn.ravel(), g_sa.ravel())
        parts["l_hinge"], h_sn, h_sa = _hinge_and_grad(
            grid_n, grid_a, mask, cfg.delta_minus, cfg.delta_plus, cfg.hinge_literal, cache.ups
        )
        cache.g_hinge = (h_sn.ravel(), h_sa.ravel())
        parts["l_reg"] = orthogonality_reg(cache.bank)

    return total_loss(parts, cfg), cache


def term_weights(cfg: TrainConfig, term: str = "total") -> dict[str, float]:
    """Weight of each loss term in the differentiated objective."""
    if term == "total":
        weights = {"l_base": 1.0, "l_da": 1.0, "l_global": 1.0, "l_hinge": cfg.eta, "l_reg": cfg.xi}
    elif term in LOSS_TERMS:
        weights = {t: float(t == term) for t in LOSS_TERMS}
    else:
        raise ConfigError(f"Unknown loss term '{term}'. Valid: total, {', '.join(LOSS_TERMS)}.")
    active = {"l_base": cfg.use_base, "l_da": cfg.use_dynamic, "l_global": True,
              "l_hinge": cfg.use_dynamic, "l_reg": cfg.use_dynamic}
    return {t: (w if active[t] else 0.0) for t, w in weights.items()}


def _softmax_pair_grad(g_sn, g_sa, s_n, s_a, tau):
    """Gradient w.r.t. the logit gap z_a - z_n of a loss with map gradients (g_sn, g_sa)."""
    return (g_sa - g_sn) * s_a * s_n / tau


def backward(
    model: SubspaceModel,
    sample: LabeledSample,
    cfg: TrainConfig,
    term: str = "total",
    assignments: dict[str, AssignmentMatrix] | None = None,
) -> tuple[LossBreakdown, GradientSet]:
    """Loss breakdown and analytic gradients of `term` for every parameter group."""
    breakdown, cache = forward(model, sample, cfg, assignments)
    w = term_weights(cfg, term)
    grads = GradientSet.zeros(model).grads
    d = model.d

    if w["l_global"]:
        for c in CLASSES:
            d_g = w["l_global"] * cache.d_g_bar[c]
            if cfg.decouple_global:
                fuse_w = getattr(model, f"fuse_{c}_w")
                x = np.concatenate([getattr(model, f"g_{c}"), getattr(model, f"l_{c}")])
                grads[f"fuse_{c}_w"] += np.outer(d_g, x)
                grads[f"fuse_{c}_b"] += d_g
                d_x = fuse_w.T @ d_g
                grads[f"g_{c}"] += d_x[:d]
                grads[f"l_{c}"] += d_x[d:]
            else:
                grads[f"l_{c}"] += d_g

    if w["l_base"]:
        s_n, s_a = cache.s_base
        d_gap = w["l_base"] * _softmax_pair_grad(*cache.g_base, s_n, s_a, cfg.tau)
        for c, sign in (("n", -1.0), ("a", 1.0)):
            l_c = getattr(model, f"l_{c}")
            grads[f"l_{c}"] += _cosine_target_grad(
                cache.unit_tokens, l_c[None, :], cache.z_base[c][:, None], sign * d_gap[:, None]
            )[0]

    if cfg.use_dynamic and (w["l_da"] or w["l_hinge"] or w["l_reg"]):
        s_n, s_a = cache.s_da
        g_sn = w["l_da"] * cache.g_da[0] + w["l_hinge"] * cache.g_hinge[0]
        g_sa = w["l_da"] * cache.g_da[1] + w["l_hinge"] * cache.g_hinge[1]
        d_gap = _softmax_pair_grad(g_sn, g_sa, s_n, s_a, cfg.tau)
        for c, sign in (("n", -1.0), ("a", 1.0)):
            rows = cache.bank.for_class(c)
            upstream = (sign * d_gap)[:, None] * cache.assignments[c].weights
            d_rows = _cosine_target_grad(cache.unit_tokens, rows, cache.sims[c], upstream)
            if w["l_reg"]:
                d_rows = d_rows + w["l_reg"] * orthogonality_reg_grad(rows, c)
            l_c = getattr(model, f"l_{c}")
            heads_w = getattr(model, f"heads_{c}_w")
            grads[f"heads_{c}_w"] += np.einsum("qi,j->qij", d_rows, l_c)
            grads[f"heads_{c}_b"] += d_rows
            grads[f"l_{c}"] += np.einsum("qij,qi->j", heads_w, d_rows)

    return breakdown, GradientSet(grads).validate()


def finite_diff_gradients(
    model: SubspaceModel,
    sample: LabeledSample,
    cfg: TrainConfig,
    h: float = 1e-5,
    term: str = "total",
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """
    Analytic and central-difference gradients of `term`, per parameter group.
    The assignment of the unperturbed model is held fixed throughout.
    """
    if not h > 0:
        raise ConfigError(f"finite_diff_check: step must be > 0 (got {h}).")
    _, cache = forward(model, sample, cfg)
    frozen = cache.assignments if cfg.use_dynamic else None
    _, analytic = backward(model, sample, cfg, term, assignments=frozen)

    def evaluate(params: dict[str, np.ndarray]) -> float:
        breakdown, _ = forward(model.with_parameters(params), sample, cfg, assignments=frozen)
        return breakdown.value(term)

    numeric = {}
    for name, value in model.parameters().items():
        grad = np.zeros_like(value)
        for idx in range(value.size):
            plus, minus = value.copy(), value.copy()
            plus.flat[idx] += h
            minus.flat[idx] -= h
            grad.flat[idx] = (evaluate({name: plus}) - evaluate({name: minus})) / (2.0 * h)
        numeric[name] = grad
    return analytic.grads, numeric


def finite_diff_report(
    model: SubspaceModel,
    sample: LabeledSample,
    cfg: TrainConfig,
    h: float = 1e-5,
    term: str = "total",
    entrywise: bool = False,
) -> dict[str, float]:
    """
    Relative error per parameter group between analytic and numeric gradients.

      group     : max|analytic - numeric| / max(max|numeric|, 1e-8)
      entrywise : max over entries of |analytic - numeric| / max(|numeric|, 1e-8)

    The entrywise form is never smaller than the group form.
    """
    analytic, numeric = finite_diff_gradients(model, sample, cfg, h, term)
    report = {}
    for name, num in numeric.items():
        diff = np.abs(analytic[name] - num)
        if entrywise:
            report[name] = float(np.max(diff / np.maximum(np.abs(num), FD_FLOOR)))
        else:
            report[name] = float(np.max(diff)) / max(float(np.max(np.abs(num))), FD_FLOOR)
    return report


def finite_diff_check(
    model: SubspaceModel,
    sample: LabeledSample,
    cfg: TrainConfig,
    h: float = 1e-5,
    term: str = "total",
) -> float:
    """Largest relative gradient error over all parameter groups."""
    return max(finite_diff_report(model, sample, cfg, h, term).values())
