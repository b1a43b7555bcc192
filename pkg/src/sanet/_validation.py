"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import ConfigError, NotFittedError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


def check_tensor4(x, *, dtype=None, name="x"):
    """Return ``x`` as a C-contiguous NCHW float array.

    float64 input is kept as float64 (the finite-difference oracle needs it);
    everything else becomes float32 unless ``dtype`` forces a choice.
    """
    arr = np.asarray(x)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be rank-4 (n, c, h, w), got shape {arr.shape}")
    if any(d <= 0 for d in arr.shape):
        raise ShapeError(f"{name} has a non-positive dimension: {arr.shape}")
    if dtype is None:
        dtype = np.float64 if arr.dtype == np.float64 else np.float32
    return np.ascontiguousarray(arr, dtype=dtype)


def check_vector(v, length, *, dtype, name):
    arr = np.asarray(v, dtype=dtype).reshape(-1)
    if arr.shape[0] != length:
        raise ShapeError(f"{name} has length {arr.shape[0]}, expected {length}")
    return arr


def check_divisible(c, parts, *, what="channels"):
    if parts <= 0:
        raise ShapeError(f"parts must be positive, got {parts}")
    if c % parts:
        raise ShapeError(f"{what} c={c} is not divisible by parts={parts}")


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value <= 0:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_is_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet; call 'fit' first."
        )


def compute_dtype(*arrays):
    """float64 if any operand is float64, else float32."""
    for a in arrays:
        if a is not None and np.asarray(a).dtype == np.float64:
            return np.float64
    return np.float32
