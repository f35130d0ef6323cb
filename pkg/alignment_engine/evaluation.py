"""
alignment_engine/evaluation.py
==============================
Held-out evaluation of a SubspaceModel.

Every test sample is scored through the scoring graph at mask resolution.
From the results:
  image_auroc, image_ap   image scores vs labels
  pixel_auroc             pooled pixel scores vs pooled mask pixels
  pixel_aupro             per-region overlap up to the FPR limit
plus the per-class subspace-usage histogram of the dynamic assignment and
a count of assignment rows breaking the sparsity contract (more than k
nonzeros, or a row sum other than 0 or 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from alignment_engine.assignment import AssignmentMatrix, SubspaceUsage, subspace_usage_histogram
from alignment_engine.config import TrainConfig
from alignment_engine.metrics import DEFAULT_FPR_LIMIT, ScoredSet, aupro, auroc, average_precision
from alignment_engine.semantics import CLASSES, SubspaceModel
from data_io.samples import LabeledSample
from graph.state import ScoreResult
from graph.workflow import Runner, build_workflow, score_sample
from middleware.guards import DatasetError, EmptyInputError

METRIC_NAMES = ("image_auroc", "image_ap", "pixel_auroc", "pixel_aupro")
ROW_SUM_TOL = 1e-12


@dataclass
class EvaluationReport:
    metrics: dict[str, float]
    usage: dict[str, SubspaceUsage] = field(default_factory=dict)
    assignment_rows: int = 0
    assignment_violations: int = 0
    results: list[ScoreResult] = field(default_factory=list)


def sparsity_violations(assignment: AssignmentMatrix) -> int:
    weights = assignment.weights
    too_many = np.count_nonzero(weights, axis=1) > assignment.k
    sums = weights.sum(axis=1)
    bad_sum = (np.abs(sums) > ROW_SUM_TOL) & (np.abs(sums - 1.0) > ROW_SUM_TOL)
    return int(np.count_nonzero(too_many | bad_sum))


def evaluate_model(
    model: SubspaceModel,
    cfg: TrainConfig,
    samples: Sequence[LabeledSample],
    runner: Optional[Runner] = None,
    fpr_limit: float = DEFAULT_FPR_LIMIT,
) -> EvaluationReport:
    if not samples:
        raise EmptyInputError("evaluate_model: no samples to evaluate.")
    runner = runner or build_workflow()

    results: list[ScoreResult] = []
    stacked: dict[str, list[np.ndarray]] = {c: [] for c in CLASSES}
    rows = violations = 0
    for sample in samples:
        state = score_sample(model, cfg, sample, runner)
        if state.status != "SCORED":
            raise DatasetError(f"evaluate_model: sample '{sample.name}' rejected: {' | '.join(state.errors)}")
        results.append(state.result)
        for c, assignment in (state.assignments or {}).items():
            stacked[c].append(assignment.weights)
            rows += assignment.weights.shape[0]
            violations += sparsity_violations(assignment)

    labels = np.array([s.label for s in samples])
    image_scores = np.array([r.image_score for r in results])
    pixel_maps = [r.pixel_map for r in results]
    masks = [s.mask for s in samples]

    image_set = ScoredSet.of(image_scores, labels)
    pixel_set = ScoredSet.of(
        np.concatenate([m.scores for m in pixel_maps]),
        np.concatenate([np.ravel(m) for m in masks]),
    )
    metrics = {
        "image_auroc": auroc(image_set),
        "image_ap": average_precision(image_set),
        "pixel_auroc": auroc(pixel_set),
        "pixel_aupro": aupro(pixel_maps, masks, fpr_limit),
    }
    usage = {c: subspace_usage_histogram(np.vstack(w)) for c, w in stacked.items() if w}
    return EvaluationReport(
        metrics=metrics,
        usage=usage,
        assignment_rows=rows,
        assignment_violations=violations,
        results=results,
    )


def metrics_frame(metrics: dict[str, float]) -> pd.DataFrame:
    return pd.DataFrame({"metric": list(METRIC_NAMES), "value": [metrics[m] for m in METRIC_NAMES]})


def usage_frame(usage: dict[str, SubspaceUsage]) -> pd.DataFrame:
    rows = []
    for c, u in usage.items():
        for j in range(u.frequency.size):
            rows.append({
                "class": c,
                "subspace": j,
                "frequency": float(u.frequency[j]),
                "argmax_share": float(u.argmax_share[j]),
                "normalized_entropy": u.normalized_entropy,
            })
    return pd.DataFrame(rows, columns=["class", "subspace", "frequency", "argmax_share", "normalized_entropy"])


def scores_frame(results: Sequence[ScoreResult]) -> pd.DataFrame:
    return pd.DataFrame(
        [{"name": r.name, "label": r.label, "image_score": r.image_score, "route": r.route} for r in results],
        columns=["name", "label", "image_score", "route"],
    )
