"""Input validation helpers used at every public entry point.

All numeric state in this package is dense float64; these helpers coerce
and check once at the boundary so the kernels can assume clean inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, DimensionError, NotFittedError, NumericError


def as_matrix(x, name: str = "X") -> np.ndarray:
    """Coerce to a 2-D float64 array with finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.size == 0:
        raise DimensionError(f"{name} must be non-empty")
    check_finite(arr, name)
    return arr


def as_vector(x, name: str = "x") -> np.ndarray:
    """Coerce to a 1-D float64 array with finite entries."""
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.size == 0:
        raise DimensionError(f"{name} must be non-empty")
    check_finite(arr, name)
    return arr


def as_labels(y, name: str = "y") -> np.ndarray:
    """Coerce to a 1-D int64 label array."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got ndim={arr.ndim}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        as_int = arr.astype(np.int64)
        if not np.array_equal(as_int, arr):
            raise DataError(f"{name} must contain integer labels")
        arr = as_int
    return arr.astype(np.int64)


def check_finite(arr: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains NaN or Inf")


def check_consistent_length(*pairs) -> None:
    """``pairs`` alternates (array, name); all must share first-axis length."""
    arrays = pairs[0::2]
    names = pairs[1::2]
    lengths = [len(a) for a in arrays]
    if len(set(lengths)) > 1:
        detail = ", ".join(f"{n}={l}" for n, l in zip(names, lengths))
        raise DimensionError(f"inconsistent lengths: {detail}")


def check_is_fitted(obj, attr: str = "state_") -> None:
    if getattr(obj, attr, None) is None:
        raise NotFittedError(
            f"{type(obj).__name__} is not fitted yet; call fit() first"
        )
