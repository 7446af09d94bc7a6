"""Input validation helpers used by estimators and protocol functions."""

from __future__ import annotations

import numpy as np


def check_matrix(x, name: str = "X", *, min_rows: int = 1, min_cols: int = 1) -> np.ndarray:
    """Coerce to a finite 2-d float64 array.

    Raises ValueError naming the offending argument when the input is not
    2-dimensional, is smaller than the required shape, or contains NaN/Inf.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={arr.ndim}")
    if arr.shape[0] < min_rows or arr.shape[1] < min_cols:
        raise ValueError(
            f"{name} must be at least {min_rows}x{min_cols}, got {arr.shape[0]}x{arr.shape[1]}"
        )
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise ValueError(f"{name} contains a non-finite entry at ({bad[0]}, {bad[1]})")
    return arr


def check_vector(x, name: str = "v", *, min_len: int = 1) -> np.ndarray:
    """Coerce to a finite 1-d float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got ndim={arr.ndim}")
    if arr.shape[0] < min_len:
        raise ValueError(f"{name} must have at least {min_len} entries, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_labels(y, n_rows: int, name: str = "y") -> np.ndarray:
    """Coerce class labels to a 1-d int array of length ``n_rows``."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got ndim={arr.ndim}")
    if arr.shape[0] != n_rows:
        raise ValueError(f"{name} has {arr.shape[0]} entries, expected {n_rows}")
    if not np.issubdtype(arr.dtype, np.integer):
        as_int = arr.astype(np.int64)
        if not np.array_equal(as_int, arr):
            raise ValueError(f"{name} must contain integer class labels")
        arr = as_int
    return arr.astype(np.int64)


def check_symmetric(a, name: str = "a", tol: float = 1e-10) -> np.ndarray:
    """Validate that a square matrix is symmetric within ``tol``."""
    arr = check_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got {arr.shape[0]}x{arr.shape[1]}")
    if arr.size and np.max(np.abs(arr - arr.T)) > tol:
        raise ValueError(f"{name} is not symmetric within {tol}")
    return arr


def check_random_state(seed) -> np.random.Generator:
    """Return a numpy Generator from a seed, SeedSequence or Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
