"""Input validation helpers shared across the package.

Everything numerical is float64; these helpers coerce and check shapes so
the core modules can assume clean inputs.
"""

from __future__ import annotations

import numpy as np

PROB_SUM_TOL = 1e-12


def as_float_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_probability_matrix(p, name: str = "p", tol: float = PROB_SUM_TOL) -> np.ndarray:
    """Validate a joint probability table: nonnegative, sums to 1 within tol."""
    arr = check_finite(as_float_matrix(p, name), name)
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries")
    total = float(arr.sum())
    if abs(total - 1.0) > tol:
        raise ValueError(f"{name} sums to {total!r}, expected 1 within {tol}")
    return arr


def check_shape(arr: np.ndarray, shape: tuple[int, ...], name: str = "array") -> np.ndarray:
    if arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_unit_interval(value, name: str, *, closed_right: bool = True) -> float:
    v = float(value)
    hi_ok = v <= 1.0 if closed_right else v < 1.0
    if not (0.0 <= v and hi_ok):
        bracket = "[0, 1]" if closed_right else "[0, 1)"
        raise ValueError(f"{name} must lie in {bracket}, got {value!r}")
    return v
