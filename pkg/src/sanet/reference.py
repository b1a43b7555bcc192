"""Scalar-loop reference implementations.

Everything here walks tensors element by element in plain Python floats
(double precision) with explicit index arithmetic. It shares no code with the
vectorized path and exists to check it; it is slow by design.
"""

import math

import numpy as np


def _sig(v):
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def mean_var(x):
    """Per-(n, c) mean and biased variance as nested lists."""
    n, c, h, w = x.shape
    means = [[0.0] * c for _ in range(n)]
    vars_ = [[0.0] * c for _ in range(n)]
    for i in range(n):
        for ch in range(c):
            acc = 0.0
            for y in range(h):
                for z in range(w):
                    acc += float(x[i, ch, y, z])
            m = acc / (h * w)
            acc = 0.0
            for y in range(h):
                for z in range(w):
                    d = float(x[i, ch, y, z]) - m
                    acc += d * d
            means[i][ch] = m
            vars_[i][ch] = acc / (h * w)
    return means, vars_


def shuffle(x, g):
    n, c, h, w = x.shape
    per = c // g
    out = np.empty(x.shape, dtype=np.float64)
    for a in range(g):
        for b in range(per):
            out[:, b * g + a] = x[:, a * per + b]
    return out


def _gate(val, wrow, b, fc, vec, j):
    """Pre-activation of gate channel j given the branch's per-channel vector."""
    if fc is None:
        return val
    if fc == "affine":
        return float(wrow[j]) * val + float(b[j])
    acc = float(b[j])
    for t in range(len(vec)):
        acc += float(wrow[j, t]) * vec[t]
    return acc


def channel_branch(xk1, w1, b1, fc="affine"):
    n, k, h, w = xk1.shape
    means, _ = mean_var(xk1)
    out = np.empty(xk1.shape, dtype=np.float64)
    for i in range(n):
        for j in range(k):
            gate = _sig(_gate(means[i][j], w1, b1, fc, means[i], j))
            for y in range(h):
                for z in range(w):
                    out[i, j, y, z] = gate * float(xk1[i, j, y, z])
    return out


def spatial_branch(xk2, w2, b2, gamma, beta, eps=1e-5, with_gn=True, fc="affine"):
    n, k, h, w = xk2.shape
    means, vars_ = mean_var(xk2)
    out = np.empty(xk2.shape, dtype=np.float64)
    for i in range(n):
        for y in range(h):
            for z in range(w):
                normed = []
                for j in range(k):
                    v = float(xk2[i, j, y, z])
                    if with_gn:
                        v = (v - means[i][j]) / math.sqrt(vars_[i][j] + eps)
                        v = float(gamma[j]) * v + float(beta[j])
                    normed.append(v)
                for j in range(k):
                    gate = _sig(_gate(normed[j], w2, b2, fc, normed, j))
                    out[i, j, y, z] = gate * float(xk2[i, j, y, z])
    return out


def sa_forward(x, params, cfg):
    """Whole SA pipeline: per group, halve, attend, re-concatenate, then shuffle."""
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    g = cfg.groups
    per_group = c // g
    k = per_group // 2
    fc = cfg.fc_variant if cfg.enable_fc else None
    p = {name: np.asarray(a, dtype=np.float64) for name, a in params.arrays().items()}
    y = np.empty(x.shape, dtype=np.float64)
    for grp in range(g):
        base = grp * per_group
        xk1 = x[:, base:base + k]
        xk2 = x[:, base + k:base + per_group]
        y[:, base:base + k] = channel_branch(xk1, p["w1"], p["b1"], fc)
        y[:, base + k:base + per_group] = spatial_branch(
            xk2, p["w2"], p["b2"], p["gn_gamma"], p["gn_beta"], cfg.gn_epsilon, cfg.enable_gn, fc
        )
    return shuffle(y, cfg.shuffle_groups) if cfg.enable_shuffle else y


def se_forward(x, fc1, fc2, b1=None, b2=None):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    hidden = fc1.shape[1]
    means, _ = mean_var(x)
    out = np.empty(x.shape, dtype=np.float64)
    for i in range(n):
        hid = []
        for u in range(hidden):
            acc = 0.0 if b1 is None else float(b1[u])
            for ch in range(c):
                acc += means[i][ch] * float(fc1[ch, u])
            hid.append(max(acc, 0.0))
        for ch in range(c):
            acc = 0.0 if b2 is None else float(b2[ch])
            for u in range(hidden):
                acc += hid[u] * float(fc2[u, ch])
            gate = _sig(acc)
            for y in range(h):
                for z in range(w):
                    out[i, ch, y, z] = gate * float(x[i, ch, y, z])
    return out
