"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_nchw(X, expected_chw=None, name: str = "X") -> np.ndarray:
    """Finite float64 NCHW batch; optionally the per-sample shape is checked."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_all_finite=True, input_name=name)
    if X.ndim != 4:
        raise ValueError(f"{name} must be a 4-D NCHW batch, got shape {X.shape}")
    if expected_chw is not None and tuple(X.shape[1:]) != tuple(expected_chw):
        raise ValueError(f"{name} has per-sample shape {X.shape[1:]}, expected {tuple(expected_chw)}")
    return X


def check_activations(A, name: str = "activations") -> np.ndarray:
    """Non-empty 1-D view of activation samples (float or integer ring values)."""
    A = np.asarray(A)
    if A.size == 0:
        raise ValueError(f"{name} is empty")
    if A.dtype.kind == "f":
        A = check_array(A.reshape(-1, 1), dtype=np.float64, ensure_all_finite=True, input_name=name)
    elif A.dtype.kind not in "iu":
        raise TypeError(f"{name} must be float or integer, got {A.dtype}")
    return A.ravel()


def check_int(value, name: str, minimum: int | None = None, maximum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ValueError(f"{name} must be <= {maximum}, got {value}")
    return value


def check_fraction(value, name: str, inclusive_low: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number")
    value = float(value)
    low_ok = value >= 0 if inclusive_low else value > 0
    if not (low_ok and value <= 1):
        raise ValueError(f"{name} must lie in {'[' if inclusive_low else '('}0, 1], got {value}")
    return value
