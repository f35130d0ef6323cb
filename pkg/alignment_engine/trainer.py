"""
alignment_engine/trainer.py
===========================
Mini-batch training loop.

Each epoch draws one seeded permutation of the training set, averages the
per-sample analytic gradients over each batch and takes one Adam step per
batch. The recorded history is the per-epoch mean LossBreakdown of the
samples as they were seen during that epoch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from alignment_engine.config import TrainConfig
from alignment_engine.objective import GradientSet, LossBreakdown, backward
from alignment_engine.optimizer import AdamState, adam_step
from alignment_engine.semantics import SubspaceModel, init_model
from data_io.samples import LabeledSample
from middleware.guards import DatasetError, EmptyInputError

HISTORY_COLUMNS = ["epoch", "l_global", "l_base", "l_da", "l_hinge", "l_reg", "total"]


@dataclass(frozen=True)
class TrainResult:
    model: SubspaceModel
    history: list[LossBreakdown]

    @property
    def final(self) -> LossBreakdown:
        return self.history[-1]


def check_training_set(dataset: Sequence[LabeledSample]) -> None:
    if not dataset:
        raise EmptyInputError("train: dataset is empty.")
    labels = {int(s.label) for s in dataset}
    if labels != {0, 1}:
        missing = "anomalous" if 1 not in labels else "normal"
        raise DatasetError(f"train: dataset has no {missing} samples; both labels are required.")
    widths = {s.grid.d for s in dataset}
    if len(widths) != 1:
        raise DatasetError(f"train: token widths differ across samples: {sorted(widths)}.")


def train(
    dataset: Sequence[LabeledSample],
    cfg: TrainConfig,
    model: Optional[SubspaceModel] = None,
    on_epoch: Optional[Callable[[int, LossBreakdown], None]] = None,
) -> TrainResult:
    """Train from a seeded initialisation (or `model`) for cfg.epochs epochs."""
    cfg.validate()
    check_training_set(dataset)
    if model is None:
        model = init_model(dataset[0].grid.d, cfg.n_subspaces, cfg.seed, cfg.head_noise, cfg.fuse_noise)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.zeros(model)
    history: list[LossBreakdown] = []

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        seen: list[LossBreakdown] = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            results = [backward(model, sample, cfg) for sample in batch]
            seen.extend(breakdown for breakdown, _ in results)
            grads = GradientSet.mean([g for _, g in results])
            model, state = adam_step(model, state, grads, cfg.lr)
        epoch_loss = LossBreakdown.mean(seen)
        history.append(epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)

    return TrainResult(model=model.validate(), history=history)


def history_frame(history: Sequence[LossBreakdown]) -> pd.DataFrame:
    rows = [{"epoch": i, **b.as_dict()} for i, b in enumerate(history, start=1)]
    return pd.DataFrame(rows, columns=HISTORY_COLUMNS)
