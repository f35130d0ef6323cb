"""
alignment_engine/metrics.py
===========================
Image- and pixel-level evaluation metrics.

  auroc              rank-sum (Mann-Whitney) AUROC, ties count 1/2
  auroc_bruteforce   O(n^2) pairwise oracle with the same tie convention
  average_precision  step-sum AP; items sharing a score enter together
  aupro              per-region overlap vs FPR, exact sweep over pooled scores,
                     trapezoid up to fpr_limit and normalised by it
  aupro_dense_sweep  the same curve on a fixed threshold grid (oracle)

Regions are 4-connected components of each mask (scipy.ndimage.label).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.integrate import trapezoid
from scipy.stats import rankdata

from alignment_engine.assignment import AnomalyMap
from middleware.guards import ConfigError, EmptyInputError, ShapeMismatchError, check_finite

DEFAULT_FPR_LIMIT = 0.3
DENSE_THRESHOLDS = 200


@dataclass(frozen=True)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if np.shape(self.scores) != np.shape(self.labels):
            raise ShapeMismatchError(
                f"ScoredSet: {np.size(self.scores)} scores vs {np.size(self.labels)} labels."
            )

    @classmethod
    def of(cls, scores, labels) -> "ScoredSet":
        return cls(
            check_finite("scores", np.ravel(scores)),
            (np.ravel(labels) > 0).astype(int),
        )

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.labels))

    @property
    def n_negative(self) -> int:
        return int(self.labels.size - np.sum(self.labels))

    def require_both_classes(self, metric: str) -> None:
        if self.n_positive == 0 or self.n_negative == 0:
            raise EmptyInputError(
                f"{metric}: needs positives and negatives (got {self.n_positive} / {self.n_negative})."
            )


def _as_scored(s: ScoredSet | tuple) -> ScoredSet:
    return s if isinstance(s, ScoredSet) else ScoredSet.of(*s)


def auroc(s: ScoredSet) -> float:
    s = _as_scored(s)
    s.require_both_classes("auroc")
    ranks = rankdata(s.scores, method="average")
    n_pos, n_neg = s.n_positive, s.n_negative
    u = float(np.sum(ranks[s.labels == 1])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auroc_bruteforce(s: ScoredSet) -> float:
    s = _as_scored(s)
    s.require_both_classes("auroc_bruteforce")
    pos = s.scores[s.labels == 1]
    neg = s.scores[s.labels == 0]
    diff = pos[:, None] - neg[None, :]
    wins = float(np.count_nonzero(diff > 0))
    ties = float(np.count_nonzero(diff == 0))
    return (wins + 0.5 * ties) / (s.n_positive * s.n_negative)


def average_precision(s: ScoredSet) -> float:
    s = _as_scored(s)
    if s.n_positive == 0:
        raise EmptyInputError("average_precision: no positive labels.")
    order = np.argsort(-s.scores, kind="stable")
    scores, labels = s.scores[order], s.labels[order]
    # last index of every run of equal scores
    ends = np.append(np.flatnonzero(np.diff(scores) != 0), scores.size - 1)
    tp = np.cumsum(labels)[ends].astype(float)
    seen = (ends + 1).astype(float)
    precision = tp / seen
    d_recall = np.diff(np.concatenate([[0.0], tp])) / s.n_positive
    return float(np.sum(precision * d_recall))


# ── AUPRO ─────────────────────────────────────────────────────────────────────

def _pixel_grid(m) -> np.ndarray:
    return m.as_grid() if isinstance(m, AnomalyMap) else np.asarray(m, dtype=float)


def _pool_regions(maps: Sequence, masks: Sequence) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """
    Flatten all maps; return pooled scores, per-pixel region id (-1 normal,
    regions numbered globally from 0), region sizes, and the normal count.
    """
    if len(maps) != len(masks):
        raise ShapeMismatchError(f"aupro: {len(maps)} maps vs {len(masks)} masks.")
    scores, region_ids, sizes = [], [], []
    offset = 0
    for m, mask in zip(maps, masks):
        grid = check_finite("aupro map", _pixel_grid(m))
        mask = np.asarray(mask) > 0
        if grid.shape != mask.shape:
            raise ShapeMismatchError(f"aupro: map {grid.shape} vs mask {mask.shape}.")
        labelled, n_regions = ndimage.label(mask)
        ids = np.where(labelled > 0, labelled - 1 + offset, -1)
        sizes.extend(np.bincount(labelled.ravel(), minlength=n_regions + 1)[1:])
        offset += n_regions
        scores.append(grid.ravel())
        region_ids.append(ids.ravel())
    if offset == 0:
        raise EmptyInputError("aupro: masks contain no anomalous region.")
    pooled_ids = np.concatenate(region_ids)
    n_normal = int(np.sum(pooled_ids < 0))
    if n_normal == 0:
        raise EmptyInputError("aupro: masks contain no normal pixels.")
    return np.concatenate(scores), pooled_ids, np.asarray(sizes, dtype=float), n_normal


def _integrate_pro(fpr: np.ndarray, pro: np.ndarray, fpr_limit: float) -> float:
    """Trapezoid area of the (fpr, pro) curve on [0, fpr_limit], divided by fpr_limit."""
    inside = np.flatnonzero(fpr <= fpr_limit)
    last = inside[-1]
    xs, ys = fpr[: last + 1], pro[: last + 1]
    if fpr[last] < fpr_limit and last + 1 < fpr.size:
        x0, x1 = fpr[last], fpr[last + 1]
        y_cut = pro[last] + (pro[last + 1] - pro[last]) * (fpr_limit - x0) / (x1 - x0)
        xs, ys = np.append(xs, fpr_limit), np.append(ys, y_cut)
    return float(trapezoid(ys, xs)) / fpr_limit


def _check_limit(fpr_limit: float) -> None:
    if not 0.0 < fpr_limit <= 1.0:
        raise ConfigError(f"aupro: fpr_limit must lie in (0, 1] (got {fpr_limit}).")


def aupro(maps: Sequence, masks: Sequence, fpr_limit: float = DEFAULT_FPR_LIMIT) -> float:
    """
    Exact sweep: every unique pooled score is a threshold (score >= t is
    predicted anomalous). A region pixel adds 1 / (|region| * R) to PRO once
    it is predicted; the curve is a cumulative sum in score order.
    """
    _check_limit(fpr_limit)
    scores, ids, sizes, n_normal = _pool_regions(maps, masks)
    normal = ids < 0
    weight = np.zeros(scores.size)
    weight[~normal] = 1.0 / (sizes[ids[~normal]] * sizes.size)

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    ends = np.append(np.flatnonzero(np.diff(sorted_scores) != 0), scores.size - 1)
    fpr = np.cumsum(normal[order])[ends] / n_normal
    pro = np.cumsum(weight[order])[ends]
    return _integrate_pro(np.concatenate([[0.0], fpr]), np.concatenate([[0.0], pro]), fpr_limit)


def aupro_dense_sweep(
    maps: Sequence,
    masks: Sequence,
    fpr_limit: float = DEFAULT_FPR_LIMIT,
    n_thresholds: int = DENSE_THRESHOLDS,
) -> float:
    """Reference AUPRO on `n_thresholds` evenly spaced thresholds, regions recounted each time."""
    _check_limit(fpr_limit)
    scores, ids, sizes, n_normal = _pool_regions(maps, masks)
    normal = ids < 0
    fpr, pro = [0.0], [0.0]
    for t in np.linspace(scores.max(), scores.min(), n_thresholds):
        predicted = scores >= t
        fpr.append(np.count_nonzero(predicted & normal) / n_normal)
        hits = np.bincount(ids[predicted & ~normal], minlength=sizes.size)
        pro.append(float(np.mean(hits / sizes)))
    return _integrate_pro(np.asarray(fpr), np.asarray(pro), fpr_limit)
