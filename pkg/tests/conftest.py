import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from alignment_engine.config import TrainConfig
from data_io.samples import LabeledSample, TokenGrid
from data_io.synthetic import SyntheticSpec, generate_synthetic


def make_sample(seed: int = 0, d: int = 8, h: int = 4, w: int = 4, s: int = 2, anomalous: bool = True) -> LabeledSample:
    rng = np.random.default_rng(seed)
    tokens = rng.normal(size=(h * w, d))
    patch_mask = np.zeros((h, w), dtype=np.uint8)
    if anomalous:
        patch_mask[1:3, 1:3] = 1
    mask = np.kron(patch_mask, np.ones((s, s), dtype=np.uint8))
    return LabeledSample(TokenGrid(tokens, h, w), mask, int(anomalous), name=f"sample_{seed}")


@pytest.fixture
def tiny_spec() -> SyntheticSpec:
    return SyntheticSpec(n_train=6, n_test=4, h=4, w=4, d=8, s=2, rect_min=1, rect_max=2, seed=0)


@pytest.fixture
def tiny_data(tiny_spec):
    return generate_synthetic(tiny_spec)


@pytest.fixture
def tiny_cfg() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=3, n_subspaces=2)
