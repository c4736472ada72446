"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np
from sklearn.utils import check_scalar as _sk_check_scalar


def check_point(y, dim=None, name="y"):
    """Return ``y`` as a finite 1-D float array, optionally of length ``dim``."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D point, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} must have {dim} coordinates, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_points(Y, dim=None, name="Y"):
    """Return ``Y`` as a finite ``(k, dim)`` float array.

    A single point is promoted to shape ``(1, dim)``.
    """
    arr = np.asarray(Y, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"{name} must have {dim} columns, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_scalar(x, name, *, min_val=None, max_val=None, include_min=True,
                 include_max=True, integer=False):
    """Validate a scalar parameter and return it as ``int`` or ``float``.

    Thin wrapper over :func:`sklearn.utils.check_scalar` that also rejects
    booleans and non-finite values.
    """
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(x, (bool, np.bool_)):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a real number'}, got bool")
    bounds = {(True, True): "both", (True, False): "left", (False, True): "right",
              (False, False): "neither"}[
        (min_val is not None and bool(include_min), max_val is not None and bool(include_max))]
    _sk_check_scalar(x, name, kind, min_val=min_val, max_val=max_val, include_boundaries=bounds)
    if not np.isfinite(x):
        raise ValueError(f"{name} must be finite")
    return int(x) if integer else float(x)
