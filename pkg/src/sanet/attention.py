"""Shuffle Attention (SA) forward pipeline and the SE comparison block.

Every differentiable piece comes as a ``*_forward`` returning ``(out, cache)``
plus a matching ``*_backward(dout, cache)``. ``sa_forward`` composes them and,
when handed a :class:`sanet.grad.GradTape`, records each step so that
:func:`sanet.grad.backward` can replay the pipeline in reverse.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_positive_int, check_tensor4, check_vector
from .exceptions import ConfigError, ShapeError
from .tensor import channel_shuffle, concat_channels, mean_spatial, shuffle_permutation, sigmoid, split_channels, var_spatial

FC_VARIANTS = ("affine", "conv")
PARAM_NAMES = ("w1", "b1", "w2", "b2", "gn_gamma", "gn_beta")


@dataclass(frozen=True)
class SaConfig:
    groups: int = 64
    shuffle_groups: int = 2
    gn_epsilon: float = 1e-5
    enable_gn: bool = True
    enable_shuffle: bool = True
    enable_fc: bool = True
    fc_variant: str = "affine"

    def __post_init__(self):
        check_positive_int(self.groups, "groups")
        check_positive_int(self.shuffle_groups, "shuffle_groups")
        if not self.gn_epsilon > 0:
            raise ConfigError(f"gn_epsilon must be positive, got {self.gn_epsilon}")
        if self.fc_variant not in FC_VARIANTS:
            raise ConfigError(f"fc_variant must be one of {FC_VARIANTS}, got {self.fc_variant!r}")

    @property
    def fc(self):
        """The gate transform actually applied: 'affine', 'conv' or None."""
        return self.fc_variant if self.enable_fc else None

    def validate(self, channels):
        if channels % (2 * self.groups):
            raise ConfigError(
                f"channel count C={channels} is not divisible by 2*G={2 * self.groups} (G={self.groups})"
            )
        if self.enable_shuffle and channels % self.shuffle_groups:
            raise ConfigError(
                f"channel count C={channels} is not divisible by shuffle_groups={self.shuffle_groups}"
            )

    @classmethod
    def variant(cls, name, **overrides):
        """Config for one of the ablation rows: origin, wo_gn, wo_shuffle, wo_fc, conv1x1."""
        toggles = {
            "origin": {},
            "wo_gn": {"enable_gn": False},
            "wo_shuffle": {"enable_shuffle": False},
            "wo_fc": {"enable_fc": False},
            "conv1x1": {"fc_variant": "conv"},
        }
        if name not in toggles:
            raise ConfigError(f"unknown ablation variant {name!r}; expected one of {sorted(toggles)}")
        return cls(**{**toggles[name], **overrides})


ABLATION_VARIANTS = ("origin", "wo_gn", "wo_shuffle", "wo_fc", "conv1x1")


@dataclass
class SaParams:
    """Learnable state of one SA module, shared by all G groups.

    ``w1``/``w2`` are length-k vectors (k = C/2G) for the affine gate, or k x k
    matrices for the 1x1-conv variant. Everything else is a length-k vector.
    """

    channels: int
    groups: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    gn_gamma: np.ndarray
    gn_beta: np.ndarray
    fc_variant: str = field(default="affine")

    def __post_init__(self):
        self.channels = int(self.channels)
        self.groups = int(self.groups)
        if self.groups <= 0 or self.channels % (2 * self.groups):
            raise ConfigError(
                f"channel count C={self.channels} is not divisible by 2*G (G={self.groups})"
            )
        k = self.sub_channels
        wshape = (k, k) if self.fc_variant == "conv" else (k,)
        for name in PARAM_NAMES:
            arr = np.asarray(getattr(self, name))
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float32)
            want = wshape if name in ("w1", "w2") else (k,)
            if arr.shape != want:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {want} for C={self.channels}, G={self.groups}")
            setattr(self, name, arr)

    @property
    def sub_channels(self):
        return self.channels // (2 * self.groups)

    @classmethod
    def init(cls, channels, groups, fc_variant="affine", dtype=np.float32):
        """Default initialization: gate weights 0, gate biases 1, GN affine (1, 0)."""
        if groups <= 0 or channels % (2 * groups):
            raise ConfigError(f"channel count C={channels} is not divisible by 2*G (G={groups})")
        k = channels // (2 * groups)
        wshape = (k, k) if fc_variant == "conv" else (k,)
        return cls(
            channels, groups,
            w1=np.zeros(wshape, dtype), b1=np.ones(k, dtype),
            w2=np.zeros(wshape, dtype), b2=np.ones(k, dtype),
            gn_gamma=np.ones(k, dtype), gn_beta=np.zeros(k, dtype),
            fc_variant=fc_variant,
        )

    @classmethod
    def random(cls, channels, groups, rng, fc_variant="affine", scale=1.0, dtype=np.float32):
        p = cls.init(channels, groups, fc_variant, dtype)
        for name in PARAM_NAMES:
            arr = getattr(p, name)
            setattr(p, name, rng.normal(arr.shape, scale, dtype=dtype))
        return p

    def arrays(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def count(self):
        return int(sum(a.size for a in self.arrays().values()))

    def astype(self, dtype):
        return replace(self, **{n: a.astype(dtype) for n, a in self.arrays().items()})

    def copy(self):
        return replace(self, **{n: a.copy() for n, a in self.arrays().items()})


def _sum(a, axis):
    return np.asarray(a, dtype=np.float64).sum(axis=axis)


def _gate_transform(y, w, b, fc):
    """Per-channel gate pre-activation for (m, k) or (m, k, h, w) inputs."""
    if fc is None:
        return y
    if fc == "affine":
        shape = (1, -1) + (1,) * (y.ndim - 2)
        return w.reshape(shape) * y + b.reshape(shape)
    shape = (1, -1) + (1,) * (y.ndim - 2)
    return np.einsum("ij,nj...->ni...", w, y) + b.reshape(shape)


def _gate_transform_backward(dz, y, w, fc):
    """Returns (dy, dw, db); ``dz`` and ``y`` share a shape."""
    dtype = dz.dtype
    if fc is None:
        return dz, np.zeros_like(w), np.zeros(w.shape[0], dtype)
    axes = (0,) + tuple(range(2, dz.ndim))
    db = _sum(dz, axes).astype(dtype)
    if fc == "affine":
        shape = (1, -1) + (1,) * (dz.ndim - 2)
        dw = _sum(dz * y, axes).astype(dtype)
        return dz * w.reshape(shape), dw, db
    m, k = dz.shape[:2]
    dz2 = np.moveaxis(dz.reshape(m, k, -1), 1, 2).reshape(-1, k).astype(np.float64)
    y2 = np.moveaxis(y.reshape(m, k, -1), 1, 2).reshape(-1, k).astype(np.float64)
    dw = (dz2.T @ y2).astype(dtype)
    return np.einsum("ij,ni...->nj...", w, dz), dw, db


def channel_branch_forward(xk1, w1, b1, fc="affine"):
    xk1 = check_tensor4(xk1, name="xk1")
    k = xk1.shape[1]
    w1, b1 = _check_gate_params(w1, b1, k, fc, xk1.dtype, "w1", "b1")
    s = mean_spatial(xk1)
    gate = sigmoid(_gate_transform(s, w1, b1, fc))
    out = gate[:, :, None, None] * xk1
    return out, (xk1, s, gate, w1, fc)


def channel_branch_backward(dout, cache):
    xk1, s, gate, w1, fc = cache
    hw = xk1.shape[2] * xk1.shape[3]
    dgate = _sum(dout * xk1, (2, 3)).astype(xk1.dtype)
    dz = dgate * gate * (1 - gate)
    ds, dw1, db1 = _gate_transform_backward(dz, s, w1, fc)
    dx = dout * gate[:, :, None, None] + (ds / hw)[:, :, None, None]
    return dx.astype(xk1.dtype), dw1, db1


def channel_branch(xk1, w1, b1, fc="affine"):
    """Channel attention: ``sigmoid(w1 * GAP(x) + b1) * x``."""
    return channel_branch_forward(xk1, w1, b1, fc)[0]


def group_norm_forward(x, gamma, beta, eps=1e-5):
    """Normalize every (n, c) slice over its h*w positions, then apply a per-channel affine.

    This is group norm with one channel per group; the toy network's
    normalization layers use it too.
    """
    dtype = x.dtype
    mu = mean_spatial(x)
    var = var_spatial(x, mu)
    inv_std = (1.0 / np.sqrt(var.astype(np.float64) + eps)).astype(dtype)
    xhat = (x - mu[:, :, None, None]) * inv_std[:, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y, (xhat, inv_std, gamma)


def group_norm_backward(dy, cache):
    """Returns (dx, dgamma, dbeta)."""
    xhat, inv_std, gamma = cache
    dtype = xhat.dtype
    dgamma = _sum(dy * xhat, (0, 2, 3)).astype(dtype)
    dbeta = _sum(dy, (0, 2, 3)).astype(dtype)
    dxhat = (dy * gamma[None, :, None, None]).astype(np.float64)
    xh = xhat.astype(np.float64)
    m1 = dxhat.mean(axis=(2, 3), keepdims=True)
    m2 = (dxhat * xh).mean(axis=(2, 3), keepdims=True)
    dx = (inv_std[:, :, None, None] * (dxhat - m1 - xh * m2)).astype(dtype)
    return dx, dgamma, dbeta


def spatial_branch_forward(xk2, w2, b2, gn_gamma, gn_beta, eps=1e-5, with_gn=True, fc="affine"):
    xk2 = check_tensor4(xk2, name="xk2")
    k, dtype = xk2.shape[1], xk2.dtype
    w2, b2 = _check_gate_params(w2, b2, k, fc, dtype, "w2", "b2")
    gn_gamma = check_vector(gn_gamma, k, dtype=dtype, name="gn_gamma")
    gn_beta = check_vector(gn_beta, k, dtype=dtype, name="gn_beta")
    if with_gn:
        y, gn_cache = group_norm_forward(xk2, gn_gamma, gn_beta, eps)
    else:
        y, gn_cache = xk2, None
    gate = sigmoid(_gate_transform(y, w2, b2, fc))
    out = gate * xk2
    return out, (xk2, y, gn_cache, gate, w2, gn_gamma, fc)


def spatial_branch_backward(dout, cache):
    """Returns (dx, dw2, db2, dgn_gamma, dgn_beta)."""
    xk2, y, gn_cache, gate, w2, gn_gamma, fc = cache
    dtype = xk2.dtype
    dz = dout * xk2 * gate * (1 - gate)
    dy, dw2, db2 = _gate_transform_backward(dz, y, w2, fc)
    dx = dout * gate
    if gn_cache is not None:
        dxn, dgamma, dbeta = group_norm_backward(dy, gn_cache)
        dx = dx + dxn
    else:
        dgamma = np.zeros_like(gn_gamma)
        dbeta = np.zeros_like(gn_gamma)
        dx = dx + dy
    return dx.astype(dtype), dw2, db2, dgamma, dbeta


def spatial_branch(xk2, w2, b2, gn_gamma, gn_beta, eps=1e-5, with_gn=True, fc="affine"):
    """Spatial attention: ``sigmoid(w2 * GN(x) + b2) * x`` with per-channel GN."""
    return spatial_branch_forward(xk2, w2, b2, gn_gamma, gn_beta, eps, with_gn, fc)[0]


def _check_gate_params(w, b, k, fc, dtype, wname, bname):
    w = np.asarray(w, dtype=dtype)
    if fc is None:
        return w, check_vector(b, k, dtype=dtype, name=bname)
    want = (k, k) if fc == "conv" else (k,)
    if fc == "affine":
        w = w.reshape(-1)
    if w.shape != want:
        raise ShapeError(f"{wname} has shape {w.shape}, expected {want} for {k} channels")
    return w, check_vector(b, k, dtype=dtype, name=bname)


def sa_forward(x, params, cfg=None, tape=None):
    """Shuffle Attention forward pass; output has the shape of ``x``.

    Channels are split into ``cfg.groups`` sub-features, each halved into a
    channel-attention and a spatial-attention branch, re-concatenated and
    finally mixed across groups by ``channel_shuffle``.
    """
    cfg = cfg or SaConfig(groups=params.groups)
    x = check_tensor4(x)
    n, c, h, w = x.shape
    cfg.validate(c)
    if params.channels != c or params.groups != cfg.groups:
        raise ConfigError(
            f"params were built for C={params.channels}, G={params.groups} but got C={c}, G={cfg.groups}"
        )
    dtype = x.dtype
    p = {name: np.asarray(a, dtype=dtype) for name, a in params.arrays().items()}
    g = cfg.groups

    xg = x.reshape(n * g, c // g, h, w)
    xk1, xk2 = split_channels(xg, 2)
    yk1, cache1 = channel_branch_forward(xk1, p["w1"], p["b1"], cfg.fc)
    yk2, cache2 = spatial_branch_forward(
        xk2, p["w2"], p["b2"], p["gn_gamma"], p["gn_beta"], cfg.gn_epsilon, cfg.enable_gn, cfg.fc
    )
    y = concat_channels([yk1, yk2]).reshape(n, c, h, w)
    out = channel_shuffle(y, cfg.shuffle_groups) if cfg.enable_shuffle else y

    if tape is not None:
        half = xk1.shape[1]
        tape.begin(dict(x=x, **p))
        tape.record("fold_groups", lambda d: (d.reshape(n, c, h, w),), ("x",), ("xg",), [xg.shape])
        tape.record(
            "split_halves",
            lambda d1, d2: (np.concatenate([d1, d2], axis=1),),
            ("xg",), ("xk1", "xk2"), [xk1.shape, xk2.shape],
        )
        tape.record(
            "channel_branch", lambda d: channel_branch_backward(d, cache1),
            ("xk1", "w1", "b1"), ("yk1",), [yk1.shape],
        )
        tape.record(
            "spatial_branch", lambda d: spatial_branch_backward(d, cache2),
            ("xk2", "w2", "b2", "gn_gamma", "gn_beta"), ("yk2",), [yk2.shape],
        )
        tape.record(
            "concat_halves", lambda d: (d[:, :half], d[:, half:]),
            ("yk1", "yk2"), ("yg",), [(n * g, c // g, h, w)],
        )
        tape.record("unfold_groups", lambda d: (d.reshape(n * g, c // g, h, w),), ("yg",), ("y",), [y.shape])
        if cfg.enable_shuffle:
            inverse = np.argsort(shuffle_permutation(c, cfg.shuffle_groups))
            tape.record("channel_shuffle", lambda d: (d[:, inverse],), ("y",), ("out",), [out.shape])
        else:
            tape.record("identity", lambda d: (d,), ("y",), ("out",), [out.shape])
    return out


def se_forward_cache(x, fc1, fc2, b1=None, b2=None, r=None):
    x = check_tensor4(x)
    n, c, h, w = x.shape
    dtype = x.dtype
    fc1 = np.asarray(fc1, dtype=dtype)
    fc2 = np.asarray(fc2, dtype=dtype)
    if fc1.ndim != 2 or fc1.shape[0] != c:
        raise ShapeError(f"fc1 has shape {fc1.shape}, expected ({c}, C/r)")
    hidden = fc1.shape[1]
    if fc2.shape != (hidden, c):
        raise ShapeError(f"fc2 has shape {fc2.shape}, expected ({hidden}, {c})")
    if r is not None and (c % r or c // r != hidden):
        raise ShapeError(f"reduction r={r} inconsistent with C={c} and hidden width {hidden}")
    b1 = np.zeros(hidden, dtype) if b1 is None else check_vector(b1, hidden, dtype=dtype, name="b1")
    b2 = np.zeros(c, dtype) if b2 is None else check_vector(b2, c, dtype=dtype, name="b2")
    s = mean_spatial(x)
    a = s @ fc1 + b1
    hid = np.maximum(a, 0)
    gate = sigmoid(hid @ fc2 + b2)
    out = gate[:, :, None, None] * x
    return out, (x, s, a, hid, gate, fc1, fc2)


def se_forward(x, fc1, fc2, r=None, b1=None, b2=None):
    """Squeeze-and-excitation: GAP, FC(C->C/r), ReLU, FC(C/r->C), sigmoid, rescale."""
    return se_forward_cache(x, fc1, fc2, b1, b2, r)[0]


def se_backward(dout, cache):
    """Returns (dx, dfc1, dfc2, db1, db2)."""
    x, s, a, hid, gate, fc1, fc2 = cache
    dtype = x.dtype
    hw = x.shape[2] * x.shape[3]
    dgate = _sum(dout * x, (2, 3)).astype(dtype)
    dz2 = dgate * gate * (1 - gate)
    dfc2 = hid.T @ dz2
    db2 = dz2.sum(axis=0)
    dhid = dz2 @ fc2.T
    da = dhid * (a > 0)
    dfc1 = s.T @ da
    db1 = da.sum(axis=0)
    ds = da @ fc1.T
    dx = dout * gate[:, :, None, None] + (ds / hw)[:, :, None, None]
    return dx.astype(dtype), dfc1, dfc2, db1, db2
