"""Input validation helpers used at module boundaries.

Small, reusable checks so estimator-facing entry points fail fast with
consistent error types instead of deep numpy tracebacks.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import OutOfBounds, ShapeError


def as_int_triple(value, name: str = "value") -> tuple[int, int, int]:
    """Coerce a scalar or length-3 sequence to an (z, y, x) int tuple."""
    if np.isscalar(value):
        value = (value, value, value)
    t = tuple(int(v) for v in value)
    if len(t) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(t)}")
    return t  # type: ignore[return-value]


def check_positive_triple(value: Sequence, name: str = "value") -> tuple[int, int, int]:
    t = as_int_triple(value, name)
    if any(v <= 0 for v in t):
        raise ValueError(f"{name} components must be positive, got {t}")
    return t


def check_point_in_bounds(coord: Sequence[int], shape: Sequence[int], name: str = "point") -> tuple[int, int, int]:
    c = as_int_triple(coord, name)
    if any(v < 0 or v >= n for v, n in zip(c, shape)):
        raise OutOfBounds(f"{name} {c} outside grid of shape {tuple(shape)}")
    return c


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} must share a shape, got {a.shape} vs {b.shape}")


def check_finite(data: np.ndarray, name: str = "data") -> None:
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{name} contains NaN or Inf")


def as_binary_mask(arr: np.ndarray, name: str = "mask") -> np.ndarray:
    """Return a boolean view/copy of a mask-like array."""
    arr = np.asarray(arr)
    if arr.dtype == bool:
        return arr
    return arr != 0


def check_probabilities(arr: np.ndarray, name: str = "probabilities") -> None:
    if arr.size and (float(arr.min()) < 0.0 or float(arr.max()) > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
