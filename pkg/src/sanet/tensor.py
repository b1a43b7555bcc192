"""Dense NCHW tensor primitives.

Tensors are plain ``numpy`` arrays of rank 4 in row-major NCHW order. Storage is
float32; float64 input is carried through unchanged so that gradient checks can
re-evaluate the same code path in double precision. Spatial reductions always
accumulate in float64 and round once at the end.
"""

import numpy as np

from ._validation import check_divisible, check_tensor4, check_vector, compute_dtype
from .exceptions import ShapeError

__all__ = [
    "Rng",
    "tensor4",
    "split_channels",
    "concat_channels",
    "channel_shuffle",
    "shuffle_permutation",
    "elementwise",
    "scale_shift",
    "sigmoid",
    "mean_spatial",
    "var_spatial",
]


class Rng:
    """Seeded, splittable random stream.

    Backed by numpy's Philox-4x64 counter-based bit generator keyed through
    ``SeedSequence(seed)``. The same seed and call sequence always reproduce
    the same stream; :meth:`split` derives independent child streams.
    """

    def __init__(self, seed=0, *, _seed_seq=None):
        if _seed_seq is None:
            seed = int(seed)
            if not 0 <= seed < 2**64:
                raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
            _seed_seq = np.random.SeedSequence(seed)
        self.seed = seed
        self._seed_seq = _seed_seq
        self._gen = np.random.Generator(np.random.Philox(_seed_seq))

    def split(self, n=2):
        return [Rng(self.seed, _seed_seq=s) for s in self._seed_seq.spawn(n)]

    def normal(self, shape, scale=1.0, dtype=np.float32):
        return (self._gen.standard_normal(shape) * scale).astype(dtype)

    def uniform(self, shape, low=0.0, high=1.0, dtype=np.float32):
        return self._gen.uniform(low, high, shape).astype(dtype)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)


def tensor4(data, shape=None):
    """Build a float32 NCHW tensor from nested data or a flat buffer plus shape."""
    arr = np.asarray(data, dtype=np.float32)
    if shape is not None:
        shape = tuple(int(d) for d in shape)
        if len(shape) != 4 or any(d <= 0 for d in shape):
            raise ShapeError(f"shape must be four positive dims, got {shape}")
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    return check_tensor4(arr)


def split_channels(x, parts):
    x = check_tensor4(x)
    check_divisible(x.shape[1], parts)
    step = x.shape[1] // parts
    return [x[:, i * step:(i + 1) * step].copy() for i in range(parts)]


def concat_channels(parts):
    if len(parts) == 0:
        raise ShapeError("concat_channels needs at least one tensor")
    parts = [check_tensor4(p, dtype=compute_dtype(*parts)) for p in parts]
    n, _, h, w = parts[0].shape
    for i, p in enumerate(parts):
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeError(
                f"part {i} has (n, h, w)={(p.shape[0], p.shape[2], p.shape[3])}, "
                f"expected {(n, h, w)}"
            )
    return np.concatenate(parts, axis=1)


def shuffle_permutation(c, g):
    """Source channel for every output channel of ``channel_shuffle(x, g)``."""
    check_divisible(c, g)
    return np.arange(c).reshape(g, c // g).T.reshape(-1)


def channel_shuffle(x, g):
    """View channels as a (g, c/g) grid, transpose it and flatten."""
    x = check_tensor4(x)
    n, c, h, w = x.shape
    check_divisible(c, g)
    out = x.reshape(n, g, c // g, h, w).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(out).reshape(n, c, h, w)


def elementwise(a, b, op):
    dtype = compute_dtype(a, b)
    a = check_tensor4(a, dtype=dtype, name="a")
    b = check_tensor4(b, dtype=dtype, name="b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown elementwise op {op!r}; expected 'add' or 'mul'")


def scale_shift(x, w, b):
    """``w[ch] * x + b[ch]`` broadcast over n, h, w."""
    x = check_tensor4(x)
    c = x.shape[1]
    w = check_vector(w, c, dtype=x.dtype, name="w")
    b = check_vector(b, c, dtype=x.dtype, name="b")
    return w[None, :, None, None] * x + b[None, :, None, None]


def sigmoid(x):
    """Numerically stable logistic function; evaluated in float64, returned in x's dtype."""
    x = np.asarray(x)
    dtype = np.float64 if x.dtype == np.float64 else np.float32
    z = x.astype(np.float64)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out.astype(dtype)


def mean_spatial(x):
    """Mean over h*w for every (n, c); returns an (n, c) matrix."""
    x = check_tensor4(x)
    return x.astype(np.float64).mean(axis=(2, 3)).astype(x.dtype)


def var_spatial(x, mean):
    """Biased variance over h*w for every (n, c), around the supplied mean."""
    x = check_tensor4(x)
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != x.shape[:2]:
        raise ShapeError(f"mean has shape {mean.shape}, expected {x.shape[:2]}")
    d = x.astype(np.float64) - mean[:, :, None, None]
    return (d * d).mean(axis=(2, 3)).astype(x.dtype)
