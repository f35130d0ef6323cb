"""
middleware/guards.py
====================
Input guards + the error hierarchy shared by every module.

Responsibilities:
  - One exception family rooted at AlignmentError; the CLI maps it to exit code 1.
  - Small check_* helpers that validate arrays before they reach a solver
    or a file writer. Each error names the offending row, key or group.
"""

from __future__ import annotations

import numpy as np


class AlignmentError(Exception):
    """Root of every domain error raised by this package."""


class ZeroNormError(AlignmentError, ValueError):
    def __init__(self, message: str, index: int | None = None, label: str | None = None):
        super().__init__(message)
        self.index = index
        self.label = label


class NonFiniteError(AlignmentError, ValueError):
    pass


class ShapeMismatchError(AlignmentError, ValueError):
    pass


class UnsupportedSizeError(AlignmentError, ValueError):
    pass


class ConfigError(AlignmentError, ValueError):
    pass


class DatasetError(AlignmentError):
    pass


class EmptyInputError(AlignmentError, ValueError):
    pass


class NonFiniteGradientError(AlignmentError, FloatingPointError):
    def __init__(self, group: str):
        super().__init__(f"Backward: non-finite gradient in parameter group '{group}'.")
        self.group = group


# ── File format errors ────────────────────────────────────────────────────────

class FormatError(AlignmentError):
    pass


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class PGMFormatError(FormatError):
    pass


# ── Guard helpers ─────────────────────────────────────────────────────────────

def check_finite(name: str, array: np.ndarray) -> np.ndarray:
    """Raise NonFiniteError if any entry of `array` is NaN or infinite."""
    arr = np.asarray(array, dtype=float)
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteError(f"{name}: non-finite value at index {tuple(int(i) for i in bad)}.")
    return arr


def check_nonzero_rows(name: str, matrix: np.ndarray) -> np.ndarray:
    """
    Return the row norms of a 2-D matrix.
    Raises ZeroNormError identifying the first all-zero row.
    """
    mat = np.asarray(matrix, dtype=float)
    if mat.ndim != 2:
        raise ShapeMismatchError(f"{name}: expected a 2-D matrix, got shape {mat.shape}.")
    norms = np.linalg.norm(mat, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        idx = int(zero[0])
        raise ZeroNormError(f"{name}: row {idx} has zero norm.", index=idx, label=name)
    return norms


def check_same_shape(name: str, a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeMismatchError(f"{name}: shapes {np.shape(a)} and {np.shape(b)} differ.")
