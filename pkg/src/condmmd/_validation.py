import numpy as np

from .exceptions import InputError


def as_points(X, name="X", allow_empty=False):
    """Coerce ``X`` to a finite float array of shape ``(n, d)``.

    One-dimensional input is read as ``n`` scalar points.
    """
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise InputError(f"{name} must be 1- or 2-dimensional, got shape {arr.shape}")
    if arr.shape[0] == 0 and not allow_empty:
        raise InputError(f"{name} is empty")
    if arr.shape[1] == 0:
        raise InputError(f"{name} has zero columns")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains NaN or infinite entries")
    return arr


def as_point(x, name="x"):
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.size == 0:
        raise InputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains NaN or infinite entries")
    return arr


def check_same_dim(A, B, names=("rows", "cols")):
    if A.shape[1] != B.shape[1]:
        raise InputError(
            f"dimension mismatch: {names[0]} have d={A.shape[1]}, "
            f"{names[1]} have d={B.shape[1]}"
        )


def check_square_symmetric(M, name="matrix", tol=1e-10):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InputError(f"{name} contains NaN or infinite entries")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > tol * scale:
        raise InputError(f"{name} is not symmetric")
    return M


def check_positive(value, name):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise InputError(f"{name} must be a positive real, got {value!r}") from None
    if not np.isfinite(v) or v <= 0:
        raise InputError(f"{name} must be a positive real, got {value!r}")
    return v
