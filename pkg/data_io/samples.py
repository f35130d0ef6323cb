"""
data_io/samples.py
==================
Token grids and labelled samples.

A TokenGrid is the visual side of one image: N = h * w patch tokens of
width d laid out row-major, plus an optional global embedding f. When f is
absent the mean patch token stands in for it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from middleware.guards import DimensionMismatchError, DatasetError, check_finite, check_nonzero_rows


@dataclass(frozen=True)
class TokenGrid:
    tokens: np.ndarray                          # (N, d)
    h: int
    w: int
    global_embedding: Optional[np.ndarray] = None   # (d,)

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def d(self) -> int:
        return self.tokens.shape[1]

    def validate(self) -> "TokenGrid":
        if self.tokens.ndim != 2 or self.h * self.w != self.tokens.shape[0]:
            raise DimensionMismatchError(
                f"TokenGrid: {self.tokens.shape[0]} tokens do not fill a {self.h}x{self.w} grid."
            )
        check_finite("TokenGrid.tokens", self.tokens)
        check_nonzero_rows("TokenGrid.tokens", self.tokens)
        if self.global_embedding is not None:
            check_finite("TokenGrid.global_embedding", self.global_embedding)
            if self.global_embedding.shape != (self.d,):
                raise DimensionMismatchError(
                    f"TokenGrid: global embedding shape {self.global_embedding.shape} != ({self.d},)."
                )
        return self

    def image_embedding(self) -> np.ndarray:
        if self.global_embedding is not None:
            return self.global_embedding
        return self.tokens.mean(axis=0)


@dataclass(frozen=True)
class LabeledSample:
    grid: TokenGrid
    mask: np.ndarray                 # (h * s, w * s) in {0, 1}
    label: int                       # 1 iff the mask has an anomalous pixel
    name: str = ""

    def validate(self) -> "LabeledSample":
        self.grid.validate()
        mh, mw = self.mask.shape
        if mh % self.grid.h or mw % self.grid.w or mh // self.grid.h != mw // self.grid.w:
            raise DimensionMismatchError(
                f"LabeledSample '{self.name}': mask {mh}x{mw} is not an integer multiple of grid "
                f"{self.grid.h}x{self.grid.w}."
            )
        if self.label != int(bool(np.any(self.mask > 0))):
            raise DatasetError(f"LabeledSample '{self.name}': label {self.label} disagrees with its mask.")
        return self
