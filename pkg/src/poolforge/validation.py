"""Input validation helpers.

Small checks shared by the numeric modules. They normalize inputs to
float64 numpy arrays (all score arithmetic accumulates in 64-bit) and
raise :class:`~poolforge.errors.ValidationError` with the offending
field name, so failures stay attributable.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

__all__ = [
    "as_matrix",
    "as_vector",
    "check_finite",
    "check_distribution",
]


def as_matrix(x, name: str, *, dtype=np.float64) -> np.ndarray:
    """Coerce ``x`` to a finite 2-D array, or raise naming the field."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise ValidationError(f"{name}: expected a 2-D matrix, got ndim={arr.ndim}")
    check_finite(arr, name)
    return arr


def as_vector(x, name: str, *, dtype=np.float64) -> np.ndarray:
    """Coerce ``x`` to a finite 1-D array, or raise naming the field."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 1:
        raise ValidationError(f"{name}: expected a 1-D vector, got ndim={arr.ndim}")
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str) -> None:
    """Reject NaN or infinity anywhere in ``arr``."""
    if arr.size and not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr).ravel())[0])
        raise ValidationError(f"{name}: non-finite value at flat index {bad}")


def check_distribution(p, name: str, *, tol: float = 1e-9) -> np.ndarray:
    """Validate a probability vector: nonnegative, sums to 1 within ``tol``."""
    vec = as_vector(p, name)
    if vec.size == 0:
        raise ValidationError(f"{name}: empty distribution")
    if np.any(vec < 0):
        raise ValidationError(f"{name}: negative probability entry")
    total = float(vec.sum())
    if abs(total - 1.0) > tol:
        raise ValidationError(f"{name}: probabilities sum to {total!r}, not 1")
    return vec
