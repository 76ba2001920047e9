"""Input validation helpers used by the public functions and estimators."""
from __future__ import annotations

import numbers

import numpy as np

from .lattice import ChipGrid, LatticeBox, Odometer

SUPPORTED_DIMENSIONS = (2, 3)


def check_dimension(d) -> int:
    if isinstance(d, bool) or not isinstance(d, numbers.Integral):
        raise TypeError(f"dimension must be an integer, got {d!r}")
    if d not in SUPPORTED_DIMENSIONS:
        raise ValueError(f"dimension must be one of {SUPPORTED_DIMENSIONS}, got {d}")
    return int(d)


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return int(value)


def check_chip_grid(X) -> ChipGrid:
    """Accept a ``ChipGrid`` or an odd-sided cube array of counts."""
    if isinstance(X, ChipGrid):
        return X
    if isinstance(X, Odometer):
        raise TypeError("expected chip counts, got an Odometer")
    arr = np.asarray(X)
    if arr.dtype == object or not (np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool):
        if np.issubdtype(arr.dtype, np.floating) and np.all(np.isfinite(arr)) and np.all(arr == np.round(arr)):
            arr = arr.astype(np.int64)
        else:
            raise TypeError(f"chip counts must be integers, got dtype {arr.dtype}")
    if arr.ndim not in SUPPORTED_DIMENSIONS:
        raise ValueError(f"chip array must be 2- or 3-dimensional, got ndim={arr.ndim}")
    grid = ChipGrid.from_array(arr.astype(np.int64))
    return grid


def check_odometer(v, box: LatticeBox | None = None) -> Odometer:
    if isinstance(v, Odometer):
        odo = v
    else:
        arr = np.asarray(v)
        if not np.issubdtype(arr.dtype, np.integer):
            raise TypeError(f"odometer values must be integers, got dtype {arr.dtype}")
        odo = Odometer.from_array(arr)
    if box is not None and odo.d != box.d:
        raise ValueError(f"odometer dimension {odo.d} != {box.d}")
    return odo


def check_tolerance(tol: float) -> float:
    tol = float(tol)
    if not 0 < tol <= 1e-6:
        raise ValueError(f"solver tolerance must lie in (0, 1e-6], got {tol}")
    return tol
