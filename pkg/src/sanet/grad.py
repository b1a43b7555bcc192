"""Reverse-mode gradients for the SA pipeline and a central-difference oracle.

The tape is deliberately narrow: it records the handful of steps
``sa_forward`` performs, each with a closure that maps output gradients to
input gradients. Tensor-core primitives get standalone ``*_backward``
functions, which the finite-difference suite checks one by one.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import PARAM_NAMES, SaConfig, SaParams, sa_forward
from .exceptions import NonFiniteError, ShapeError
from .tensor import Rng, shuffle_permutation

# Near the float64 optimum for central differences; 1e-3 leaves O(h^2)
# truncation error large enough to fail 1e-4 relative on small entries.
DEFAULT_STEP = 3e-5


@dataclass
class _Record:
    name: str
    backward: object
    inputs: tuple
    outputs: tuple
    shapes: list


class GradTape:
    """Ordered record of the forward steps of one pass."""

    def __init__(self):
        self.records = []
        self.leaves = {}
        self.visited = []

    def begin(self, leaves):
        self.records = []
        self.visited = []
        self.leaves = dict(leaves)

    def record(self, name, backward, inputs, outputs, shapes):
        self.records.append(_Record(name, backward, tuple(inputs), tuple(outputs), list(shapes)))

    @property
    def output_shape(self):
        if not self.records:
            return None
        return tuple(self.records[-1].shapes[-1])


def backward(output_grad, tape):
    """Backpropagate ``output_grad`` through ``tape``.

    Returns a dict with a gradient for every leaf recorded at the start of
    the forward pass (the input ``x`` and all six SA parameters).
    """
    if not tape.records:
        raise RuntimeError("backward called before any forward pass was recorded on this tape")
    output_grad = np.asarray(output_grad)
    if output_grad.shape != tape.output_shape:
        raise ShapeError(f"output_grad has shape {output_grad.shape}, forward output was {tape.output_shape}")
    dtype = tape.leaves["x"].dtype
    grads = {tape.records[-1].outputs[-1]: output_grad.astype(dtype)}
    tape.visited = []
    for rec in reversed(tape.records):
        tape.visited.append(rec.name)
        douts = [
            grads.pop(key) if key in grads else np.zeros(shape, dtype)
            for key, shape in zip(rec.outputs, rec.shapes)
        ]
        for key, g in zip(rec.inputs, rec.backward(*douts)):
            grads[key] = grads[key] + g if key in grads else g
    return {name: grads.get(name, np.zeros_like(leaf)) for name, leaf in tape.leaves.items()}


# Tensor-core adjoints. Each takes the upstream gradient plus whatever the
# forward needed and returns the gradient(s) with respect to the inputs.

def split_channels_backward(douts):
    return np.concatenate(douts, axis=1)


def concat_channels_backward(dout, part_channels):
    bounds = np.cumsum(part_channels)[:-1]
    return np.split(dout, bounds, axis=1)


def channel_shuffle_backward(dout, g):
    inverse = np.argsort(shuffle_permutation(dout.shape[1], g))
    return np.ascontiguousarray(dout[:, inverse])


def elementwise_backward(dout, a, b, op):
    if op == "add":
        return dout, dout
    if op == "mul":
        return dout * b, dout * a
    raise ValueError(f"unknown elementwise op {op!r}")


def scale_shift_backward(dout, x, w):
    """Returns (dx, dw, db)."""
    dw = (dout.astype(np.float64) * x).sum(axis=(0, 2, 3)).astype(dout.dtype)
    db = dout.astype(np.float64).sum(axis=(0, 2, 3)).astype(dout.dtype)
    return dout * np.asarray(w, dout.dtype)[None, :, None, None], dw, db


def sigmoid_backward(dout, y):
    """``y`` is the forward output."""
    return dout * y * (1 - y)


def mean_spatial_backward(dmean, shape):
    n, c, h, w = shape
    return np.broadcast_to((dmean / (h * w))[:, :, None, None], shape).copy()


def var_spatial_backward(dvar, x, mean):
    """Gradients of the biased variance w.r.t. x and the supplied mean."""
    n, c, h, w = x.shape
    d = x - mean[:, :, None, None]
    dx = dvar[:, :, None, None] * 2 * d / (h * w)
    dmean = -2 * dvar * d.mean(axis=(2, 3))
    return dx, dmean


def finite_difference(f, theta, h=DEFAULT_STEP):
    """Central-difference gradient of a scalar function, evaluated in float64."""
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    theta = np.array(theta, dtype=np.float64)
    flat = theta.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(theta))
        flat[i] = orig - h
        fm = float(f(theta))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite function value at coordinate {i}: f(+h)={fp}, f(-h)={fm}")
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(theta.shape)


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@dataclass
class GradCheckEntry:
    name: str
    analytic: np.ndarray
    numeric: np.ndarray
    max_abs_diff: float
    max_rel_diff: float


@dataclass
class GradCheckReport:
    entries: list = field(default_factory=list)
    tol: float = 1e-4

    @property
    def passed(self):
        return all(e.max_rel_diff <= self.tol for e in self.entries)

    def add(self, name, analytic, numeric):
        analytic = np.asarray(analytic, np.float64)
        numeric = np.asarray(numeric, np.float64)
        if analytic.size:
            max_abs = float(np.max(np.abs(analytic - numeric)))
            max_rel = float(np.max(relative_error(analytic, numeric)))
        else:
            max_abs = max_rel = 0.0
        self.entries.append(GradCheckEntry(name, analytic, numeric, max_abs, max_rel))

    def to_dict(self, include_values=False):
        rows = []
        for e in self.entries:
            row = {k: v for k, v in asdict(e).items() if k not in ("analytic", "numeric")}
            if include_values:
                row["analytic"] = e.analytic.ravel().tolist()
                row["numeric"] = e.numeric.ravel().tolist()
            rows.append(row)
        return {"tol": self.tol, "passed": self.passed, "entries": rows}

    def to_json(self, include_values=False):
        return json.dumps(self.to_dict(include_values), indent=2)

    def to_table(self):
        lines = [f"{'quantity':<10} {'size':>6} {'max_abs':>12} {'max_rel':>12}  status"]
        for e in self.entries:
            status = "ok" if e.max_rel_diff <= self.tol else "FAIL"
            lines.append(f"{e.name:<10} {e.analytic.size:>6} {e.max_abs_diff:>12.3e} {e.max_rel_diff:>12.3e}  {status}")
        lines.append(f"tolerance {self.tol:g}: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def gradcheck(forward, backward_fn, inputs, *, seed=0, h=DEFAULT_STEP, tol=1e-4):
    """Check ``backward_fn`` against central differences of ``forward``.

    ``forward(*arrays)`` returns ``(out, cache)``; ``backward_fn(dout, cache)``
    returns one gradient per input. The scalar checked is ``sum(out * r)``
    for a fixed random ``r``.
    """
    names = list(inputs)
    values = [np.asarray(inputs[n], np.float64) for n in names]
    out, cache = forward(*values)
    upstream = Rng(seed).normal(np.shape(out), dtype=np.float64)
    analytic = backward_fn(upstream, cache)
    if not isinstance(analytic, (tuple, list)):
        analytic = (analytic,)
    report = GradCheckReport(tol=tol)
    for i, name in enumerate(names):
        def f(theta, i=i):
            args = list(values)
            args[i] = theta
            return float(np.sum(forward(*args)[0] * upstream))

        report.add(name, analytic[i], finite_difference(f, values[i], h))
    return report


def gradcheck_sa(x, params, cfg=None, *, seed=0, h=DEFAULT_STEP, tol=1e-4):
    """Certify the taped SA backward against central differences, all in float64."""
    cfg = cfg or SaConfig(groups=params.groups)
    x = np.asarray(x, np.float64)
    p64 = params.astype(np.float64)
    tape = GradTape()
    out = sa_forward(x, p64, cfg, tape=tape)
    upstream = Rng(seed).normal(out.shape, dtype=np.float64)
    grads = backward(upstream, tape)

    def loss(xv, pv):
        return float(np.sum(sa_forward(xv, pv, cfg) * upstream))

    report = GradCheckReport(tol=tol)
    report.add("x", grads["x"], finite_difference(lambda t: loss(t, p64), x, h))
    for name in PARAM_NAMES:
        def f(theta, name=name):
            q = p64.copy()
            setattr(q, name, theta)
            return loss(x, q)

        report.add(name, grads[name], finite_difference(f, getattr(p64, name), h))
    return report


def random_sa_problem(shape, groups, seed, cfg=None):
    """Random input plus random (non-init) SA parameters for gradient checks."""
    n, c, hh, ww = shape
    cfg = cfg or SaConfig(groups=groups)
    rx, rp = Rng(seed).split(2)
    x = rx.normal(shape, dtype=np.float64)
    params = SaParams.random(c, groups, rp, fc_variant=cfg.fc_variant, scale=0.5, dtype=np.float64)
    return x, params, cfg
