"""Layers for the toy residual network.

Each layer keeps its learnable arrays in ``params`` and the matching
gradients in ``grads`` (same keys). ``forward`` caches what ``backward``
needs; ``backward(dout)`` fills ``grads`` and returns the input gradient.
"""

import numpy as np

from ..attention import SaConfig, SaParams, group_norm_backward, group_norm_forward, sa_forward, se_backward, se_forward_cache
from ..grad import GradTape, backward as tape_backward


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}

    def named_parameters(self, prefix=""):
        for key, arr in self.params.items():
            yield prefix + key, self, key

    def zero_grad(self):
        for key, arr in self.params.items():
            self.grads[key] = np.zeros_like(arr)


class Conv2d(Layer):
    """Square convolution without bias; padding keeps 'same' size at stride 1."""

    def __init__(self, in_ch, out_ch, kernel, rng, stride=1):
        super().__init__()
        self.kernel, self.stride, self.pad = kernel, stride, kernel // 2
        std = np.sqrt(2.0 / (in_ch * kernel * kernel))
        self.params["weight"] = rng.normal((out_ch, in_ch, kernel, kernel), std)
        self.zero_grad()

    def forward(self, x):
        n, c, h, w = x.shape
        k, s, p = self.kernel, self.stride, self.pad
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        xt = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
        if p:
            xt = np.pad(xt, ((0, 0), (0, 0), (p, p), (p, p)))
        # columns laid out (c, ki, kj, n, ho, wo) so every tap is one slab copy
        cols = np.empty((c, k, k, n, ho, wo), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = xt[:, :, i:i + s * ho:s, j:j + s * wo:s]
        cols = cols.reshape(c * k * k, n * ho * wo)
        out = self.params["weight"].reshape(-1, c * k * k) @ cols
        self._cache = (x.shape, xt.shape, cols, ho, wo)
        return np.ascontiguousarray(out.reshape(-1, n, ho, wo).transpose(1, 0, 2, 3))

    def backward(self, dout):
        (n, c, h, w), pshape, cols, ho, wo = self._cache
        k, s, p = self.kernel, self.stride, self.pad
        weight = self.params["weight"]
        d2 = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(weight.shape[0], -1)
        self.grads["weight"] = (d2 @ cols.T).reshape(weight.shape)
        dcols = (weight.reshape(weight.shape[0], -1).T @ d2).reshape(c, k, k, n, ho, wo)
        dxt = np.zeros(pshape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxt[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, i, j]
        return np.ascontiguousarray(dxt[:, :, p:p + h, p:p + w].transpose(1, 0, 2, 3))


class ChannelNorm(Layer):
    """Per-sample, per-channel spatial normalization with affine; no batch coupling."""

    def __init__(self, channels, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.params["gamma"] = np.ones(channels, np.float32)
        self.params["beta"] = np.zeros(channels, np.float32)
        self.zero_grad()

    def forward(self, x):
        y, self._cache = group_norm_forward(x, self.params["gamma"], self.params["beta"], self.eps)
        return y

    def backward(self, dout):
        dx, self.grads["gamma"], self.grads["beta"] = group_norm_backward(dout, self._cache)
        return dx


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Linear(Layer):
    def __init__(self, in_features, out_features, rng):
        super().__init__()
        self.params["weight"] = rng.normal((in_features, out_features), np.sqrt(1.0 / in_features))
        self.params["bias"] = np.zeros(out_features, np.float32)
        self.zero_grad()

    def forward(self, x):
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dout):
        self.grads["weight"] = self._x.T @ dout
        self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"].T


class SALayer(Layer):
    """Shuffle Attention; parameters live in a :class:`SaParams` shared with ``params``."""

    def __init__(self, channels, cfg):
        super().__init__()
        cfg.validate(channels)
        self.cfg = cfg
        self.sa = SaParams.init(channels, cfg.groups, cfg.fc_variant)
        self.params = self.sa.arrays()
        self.zero_grad()

    def forward(self, x):
        self._tape = GradTape()
        return sa_forward(x, self.sa, self.cfg, tape=self._tape)

    def backward(self, dout):
        grads = tape_backward(dout, self._tape)
        for key in self.params:
            self.grads[key] = grads[key]
        return grads["x"]


class SELayer(Layer):
    def __init__(self, channels, reduction, rng):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.params["fc1"] = rng.normal((channels, hidden), np.sqrt(1.0 / channels))
        self.params["fc2"] = rng.normal((hidden, channels), np.sqrt(1.0 / hidden))
        self.zero_grad()

    def forward(self, x):
        out, self._cache = se_forward_cache(x, self.params["fc1"], self.params["fc2"])
        return out

    def backward(self, dout):
        dx, self.grads["fc1"], self.grads["fc2"], _, _ = se_backward(dout, self._cache)
        return dx


class Sequential(Layer):
    def __init__(self, **layers):
        super().__init__()
        self.layers = layers

    def named_parameters(self, prefix=""):
        for name, layer in self.layers.items():
            yield from layer.named_parameters(f"{prefix}{name}.")

    def zero_grad(self):
        for layer in self.layers.values():
            layer.zero_grad()

    def forward(self, x):
        for layer in self.layers.values():
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(list(self.layers.values())):
            dout = layer.backward(dout)
        return dout


class ResidualBlock(Sequential):
    """(conv3x3, norm, relu, conv3x3, norm) -> attention -> + skip -> relu."""

    def __init__(self, in_ch, out_ch, stride, rng, attention=None):
        r = rng.split(3)
        layers = dict(
            conv1=Conv2d(in_ch, out_ch, 3, r[0], stride), norm1=ChannelNorm(out_ch), relu1=ReLU(),
            conv2=Conv2d(out_ch, out_ch, 3, r[1]), norm2=ChannelNorm(out_ch),
        )
        if attention is not None:
            layers["attn"] = attention
        super().__init__(**layers)
        self.proj = None
        if stride != 1 or in_ch != out_ch:
            self.proj = Sequential(conv=Conv2d(in_ch, out_ch, 1, r[2], stride), norm=ChannelNorm(out_ch))
        self.out_relu = ReLU()

    def named_parameters(self, prefix=""):
        yield from super().named_parameters(prefix)
        if self.proj is not None:
            yield from self.proj.named_parameters(f"{prefix}proj.")

    def zero_grad(self):
        super().zero_grad()
        if self.proj is not None:
            self.proj.zero_grad()

    def forward(self, x):
        skip = self.proj.forward(x) if self.proj is not None else x
        return self.out_relu.forward(super().forward(x) + skip)

    def backward(self, dout):
        d = self.out_relu.backward(dout)
        dx = super().backward(d)
        return dx + (self.proj.backward(d) if self.proj is not None else d)


class GlobalAvgPool(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        n, c, h, w = self._shape
        return np.broadcast_to((dout / (h * w))[:, :, None, None], self._shape).astype(dout.dtype)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return float(loss), (grad / n).astype(logits.dtype)


def make_attention(kind, channels, rng, sa_cfg=None, se_reduction=8):
    if kind == "none":
        return None
    if kind == "sa":
        return SALayer(channels, sa_cfg or SaConfig(groups=8))
    if kind == "se":
        return SELayer(channels, se_reduction, rng)
    raise ValueError(f"unknown attention kind {kind!r}")
