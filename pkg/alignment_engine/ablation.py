"""
alignment_engine/ablation.py
============================
One-axis-at-a-time sweeps around a base TrainConfig.

Default grids: subspace count Q, top-k and the sparsification threshold.
The extended sweep adds the loss weights and the module switches. Each
cell is trained on the train split for every seed in seed..seed+n_seeds-1
and evaluated on the test split; the row holds the mean of each metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np
import pandas as pd

from alignment_engine.config import TrainConfig
from alignment_engine.evaluation import METRIC_NAMES, evaluate_model
from alignment_engine.trainer import train
from data_io.samples import LabeledSample
from middleware.guards import ConfigError

ABLATION_COLUMNS = ["axis", "value", *METRIC_NAMES, "n_seeds"]

SUBSPACE_GRID = (1, 2, 3, 4, 5)
TOPK_GRID = (1, 2, 3)
EPSILON_GRID = (0.1, 0.2, 0.3, 0.4)
ETA_GRID = (1.0, 5.0, 10.0, 20.0)
XI_GRID = (10.0, 50.0, 100.0, 200.0)

MODULE_VARIANTS: dict[str, dict[str, Any]] = {
    "no_base": {"use_base": False},
    "no_dynamic": {"use_dynamic": False},
    "shared_global": {"decouple_global": False},
    "no_reg": {"xi": 0.0},
}


@dataclass(frozen=True)
class AblationCell:
    axis: str
    value: Any
    overrides: dict[str, Any]


def ablation_cells(extended: bool = False) -> list[AblationCell]:
    cells = [AblationCell("n_subspaces", q, {"n_subspaces": q}) for q in SUBSPACE_GRID]
    cells += [AblationCell("k", k, {"k": k}) for k in TOPK_GRID]
    cells += [AblationCell("epsilon", e, {"epsilon": e}) for e in EPSILON_GRID]
    if extended:
        cells += [AblationCell("eta", v, {"eta": v}) for v in ETA_GRID]
        cells += [AblationCell("xi", v, {"xi": v}) for v in XI_GRID]
        cells += [AblationCell("module", name, o) for name, o in MODULE_VARIANTS.items()]
    return cells


def run_cell(
    cell: AblationCell,
    train_set: Sequence[LabeledSample],
    test_set: Sequence[LabeledSample],
    base: TrainConfig,
    n_seeds: int = 1,
) -> dict[str, Any]:
    per_seed = []
    for offset in range(n_seeds):
        cfg = base.with_overrides(**cell.overrides, seed=base.seed + offset).validate()
        model = train(train_set, cfg).model
        per_seed.append(evaluate_model(model, cfg, test_set).metrics)
    means = {m: float(np.mean([r[m] for r in per_seed])) for m in METRIC_NAMES}
    return {"axis": cell.axis, "value": cell.value, **means, "n_seeds": n_seeds}


def run_ablation(
    train_set: Sequence[LabeledSample],
    test_set: Sequence[LabeledSample],
    base: TrainConfig,
    extended: bool = False,
    n_seeds: int = 1,
    on_cell: Optional[Callable[[dict[str, Any]], None]] = None,
) -> pd.DataFrame:
    if n_seeds < 1:
        raise ConfigError(f"ablation: n_seeds must be >= 1 (got {n_seeds}).")
    rows = []
    for cell in ablation_cells(extended):
        row = run_cell(cell, train_set, test_set, base, n_seeds)
        rows.append(row)
        if on_cell is not None:
            on_cell(row)
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)
