"""
data_io/synthetic.py
====================
Seeded planted-anomaly benchmark.

Each image draws one normal prototype; every patch token is that prototype
plus Gaussian noise. An anomalous image plants one axis-aligned rectangle
of patches whose tokens are shifted by `shift_magnitude` along a fixed
anomaly direction, and its mask marks the rectangle at `s` pixels per
patch. Prototypes and the anomaly direction are mutually orthonormal.

Tokens are rounded to single precision at generation time; a dataset
written to token files reads back identical to the in-memory one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from data_io.samples import LabeledSample, TokenGrid
from middleware.guards import ConfigError, DatasetError


@dataclass(frozen=True)
class SyntheticSpec:
    n_train: int = 200
    n_test: int = 50
    h: int = 16
    w: int = 16
    d: int = 32
    s: int = 4
    anomaly_rate: float = 0.5
    rect_min: int = 2
    rect_max: int = 5
    shift_magnitude: float = 1.0
    noise_scale: float = 0.1
    n_normal_clusters: int = 2
    seed: int = 0

    def validate(self) -> "SyntheticSpec":
        counts = ("n_train", "n_test", "h", "w", "d", "s", "rect_min", "rect_max", "n_normal_clusters")
        low = [name for name in counts if getattr(self, name) < 1]
        if low:
            raise ConfigError(f"SyntheticSpec: {', '.join(low)} must be >= 1.")
        if not 0.0 <= self.anomaly_rate <= 1.0:
            raise ConfigError(f"SyntheticSpec: anomaly_rate must lie in [0, 1] (got {self.anomaly_rate}).")
        if not self.shift_magnitude > 0:
            raise ConfigError(f"SyntheticSpec: shift_magnitude must be > 0 (got {self.shift_magnitude}).")
        if self.noise_scale < 0:
            raise ConfigError(f"SyntheticSpec: noise_scale must be >= 0 (got {self.noise_scale}).")
        if self.d < self.n_normal_clusters + 1:
            raise ConfigError(
                f"SyntheticSpec: d={self.d} cannot hold {self.n_normal_clusters} prototypes "
                "plus an orthogonal anomaly direction."
            )
        if self.rect_min > self.rect_max or self.rect_max > min(self.h, self.w):
            raise DatasetError(
                f"SyntheticSpec: rectangle sides [{self.rect_min}, {self.rect_max}] do not fit a "
                f"{self.h}x{self.w} grid."
            )
        return self


def anomalous_count(n: int, rate: float) -> int:
    """Number of anomalous images in a split: rate * n rounded half-up."""
    return int(np.floor(rate * n + 0.5))


def _directions(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    q, _ = np.linalg.qr(rng.normal(size=(spec.d, spec.n_normal_clusters + 1)))
    basis = q.T
    return basis[:-1], basis[-1]


def _make_split(
    n: int,
    prefix: str,
    spec: SyntheticSpec,
    prototypes: np.ndarray,
    anomaly_dir: np.ndarray,
    rng: np.random.Generator,
) -> list[LabeledSample]:
    n_anomalous = anomalous_count(n, spec.anomaly_rate)
    is_anomalous = np.zeros(n, dtype=bool)
    is_anomalous[rng.permutation(n)[:n_anomalous]] = True

    samples = []
    for i in range(n):
        cluster = int(rng.integers(spec.n_normal_clusters))
        tokens = prototypes[cluster] + spec.noise_scale * rng.normal(size=(spec.h * spec.w, spec.d))
        patch_mask = np.zeros((spec.h, spec.w), dtype=np.uint8)
        if is_anomalous[i]:
            rh = int(rng.integers(spec.rect_min, spec.rect_max + 1))
            rw = int(rng.integers(spec.rect_min, spec.rect_max + 1))
            top = int(rng.integers(0, spec.h - rh + 1))
            left = int(rng.integers(0, spec.w - rw + 1))
            patch_mask[top:top + rh, left:left + rw] = 1
            tokens[patch_mask.ravel() > 0] += spec.shift_magnitude * anomaly_dir
        tokens = tokens.astype(np.float32).astype(np.float64)
        mask = np.kron(patch_mask, np.ones((spec.s, spec.s), dtype=np.uint8))
        samples.append(LabeledSample(
            grid=TokenGrid(tokens=tokens, h=spec.h, w=spec.w),
            mask=mask,
            label=int(is_anomalous[i]),
            name=f"{prefix}_{i:04d}",
        ))
    return samples


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[LabeledSample], list[LabeledSample]]:
    """(train, test) splits; fully determined by spec.seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    prototypes, anomaly_dir = _directions(spec, rng)
    train = _make_split(spec.n_train, "train", spec, prototypes, anomaly_dir, rng)
    test = _make_split(spec.n_test, "test", spec, prototypes, anomaly_dir, rng)
    return train, test
