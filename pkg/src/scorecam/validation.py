"""Input validation helpers used by kernels, the estimator, and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def as_float_array(x, *, rank: int | None = None, name: str = "input") -> np.ndarray:
    """Coerce ``x`` to a C-contiguous float32 array of rank 1-4.

    Args:
        x: array-like of numbers.
        rank: when given, the exact rank the array must have.
        name: label used in error messages.

    Raises:
        ShapeError: on rank outside 1-4, rank mismatch, or any zero-size dimension.
    """
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.ndim < 1 or arr.ndim > 4:
        raise ShapeError(f"{name}: rank must be 1-4, got {arr.ndim}")
    if rank is not None and arr.ndim != rank:
        raise ShapeError(f"{name}: expected rank {rank}, got {arr.ndim} (shape {arr.shape})")
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"{name}: all dimensions must be >= 1, got shape {arr.shape}")
    return arr


def check_positive_int(value, name: str) -> int:
    value = int(value)
    if value < 1:
        raise ShapeError(f"{name} must be a positive integer, got {value}")
    return value


def check_nonnegative_int(value, name: str) -> int:
    value = int(value)
    if value < 0:
        raise ShapeError(f"{name} must be >= 0, got {value}")
    return value
