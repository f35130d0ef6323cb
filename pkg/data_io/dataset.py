"""
data_io/dataset.py
==================
Dataset directory read/write.

    DIR/spec.cfg                      synthetic spec used to generate the data
    DIR/index.csv                     split,name,label (one row per sample)
    DIR/<split>/<name>.tokb           token grid
    DIR/<split>/<name>_mask.pgm       pixel mask
"""

from __future__ import annotations

import os
from typing import Sequence

import pandas as pd

from alignment_engine.config import config_to_text
from data_io.formats import load_mask, load_token_file, save_mask, save_token_file
from data_io.samples import LabeledSample
from data_io.synthetic import SyntheticSpec
from middleware.guards import DatasetError

INDEX_FILE = "index.csv"
SPEC_FILE = "spec.cfg"
INDEX_COLUMNS = ["split", "name", "label"]


def _sample_paths(root: str, split: str, name: str) -> tuple[str, str]:
    folder = os.path.join(root, split)
    return os.path.join(folder, f"{name}.tokb"), os.path.join(folder, f"{name}_mask.pgm")


def save_dataset(
    root: str | os.PathLike,
    splits: dict[str, Sequence[LabeledSample]],
    spec: SyntheticSpec | None = None,
) -> list[str]:
    """Write every split plus the index; returns the written file paths."""
    root = os.fspath(root)
    os.makedirs(root, exist_ok=True)
    written, rows = [], []
    for split, samples in splits.items():
        os.makedirs(os.path.join(root, split), exist_ok=True)
        for sample in samples:
            token_path, mask_path = _sample_paths(root, split, sample.name)
            save_token_file(token_path, sample.grid)
            save_mask(mask_path, sample.mask)
            written += [token_path, mask_path]
            rows.append({"split": split, "name": sample.name, "label": int(sample.label)})

    index_path = os.path.join(root, INDEX_FILE)
    pd.DataFrame(rows, columns=INDEX_COLUMNS).to_csv(index_path, index=False)
    written.append(index_path)
    if spec is not None:
        spec_path = os.path.join(root, SPEC_FILE)
        with open(spec_path, "w") as f:
            f.write(config_to_text(spec))
        written.append(spec_path)
    return written


def read_index(root: str | os.PathLike) -> pd.DataFrame:
    index_path = os.path.join(os.fspath(root), INDEX_FILE)
    if not os.path.exists(index_path):
        raise DatasetError(f"Dataset index not found: {index_path}")
    index = pd.read_csv(index_path, dtype={"split": str, "name": str, "label": int})
    missing = [c for c in INDEX_COLUMNS if c not in index.columns]
    if missing:
        raise DatasetError(f"{index_path}: missing column(s) {missing}.")
    return index


def load_dataset(root: str | os.PathLike, split: str) -> list[LabeledSample]:
    """Samples of one split, in index order, validated."""
    root = os.fspath(root)
    index = read_index(root)
    rows = index[index["split"] == split]
    if rows.empty:
        raise DatasetError(f"{root}: split '{split}' has no samples.")
    samples = []
    for row in rows.itertuples(index=False):
        token_path, mask_path = _sample_paths(root, split, row.name)
        for path in (token_path, mask_path):
            if not os.path.exists(path):
                raise DatasetError(f"Dataset file missing: {path}")
        sample = LabeledSample(
            grid=load_token_file(token_path),
            mask=load_mask(mask_path),
            label=int(row.label),
            name=row.name,
        )
        samples.append(sample.validate())
    return samples
