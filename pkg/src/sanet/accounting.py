"""Parameter and FLOP accounting for SA and SE attached to ResNet-style backbones.

Two counting conventions appear in a :class:`CostReport`:

* backbone cost (``flops_base``) is in multiply-accumulates of the conv and
  fc layers, the convention ImageNet model tables use;
* attention cost (``flops_added``) counts every scalar add, multiply,
  divide, sqrt, max and sigmoid as one FLOP, so a multiply-add costs 2.

``sa_cost``/``se_cost`` give closed forms. ``count_sa_flops``/``count_se_flops``
run an actual forward pass on arrays that tally each ufunc call, and the two
must agree exactly.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, FormatError

ADDED_CONVENTION = "attention FLOPs: 1 per scalar add/mul/div/sqrt/max/sigmoid (multiply-add = 2), batch 1"
BASE_CONVENTION = "backbone FLOPs: conv+fc multiply-accumulates"

# Published reference figures for SA on ResNet-50 at 224x224, G=64.
REPORTED_SA_RESNET50 = {"params_added": 300, "gflops_added": 2.76e-3}


def _check_sa_dims(c, g):
    if g <= 0 or c <= 0 or c % (2 * g):
        raise ConfigError(f"channel count C={c} is not divisible by 2*G (G={g})")


def sa_params_count(c, g, fc_variant="affine"):
    _check_sa_dims(c, g)
    k = c // (2 * g)
    if fc_variant == "conv":
        return 2 * k * k + 4 * k
    return 3 * c // g


def sa_cost(c, h, w, g, n=1, *, enable_gn=True, enable_fc=True, fc_variant="affine"):
    """Closed-form (params, flops) of one SA module on an (n, c, h, w) input."""
    _check_sa_dims(c, g)
    k = c // (2 * g)
    p = h * w
    m = n * c // 2  # channel slices per branch
    fc = fc_variant if enable_fc else None
    gate_cost = {None: 0, "affine": 2, "conv": 2 * k}[fc]
    channel = 2 * p + 1 + gate_cost
    spatial = (7 * p + 3 if enable_gn else 0) + gate_cost * p + 2 * p
    return sa_params_count(c, g, fc_variant), m * (channel + spatial)


def se_cost(c, r=16, h=1, w=1, n=1):
    """Closed-form (params, flops) of one bias-free SE block."""
    if r <= 0 or c % r:
        raise ConfigError(f"channel count C={c} is not divisible by reduction r={r}")
    hidden = c // r
    return 2 * c * hidden, n * (2 * c * h * w + 4 * c * hidden)


class FlopCounter:
    def __init__(self):
        self.by_op = {}

    def add(self, op, count):
        self.by_op[op] = self.by_op.get(op, 0) + int(count)

    @property
    def total(self):
        return sum(self.by_op.values())


_UFUNC_OPS = {
    np.add: "add", np.subtract: "add", np.multiply: "mul", np.divide: "div",
    np.true_divide: "div", np.sqrt: "sqrt", np.maximum: "max",
}


class Counted(np.lib.mixins.NDArrayOperatorsMixin):
    """Array wrapper that tallies scalar operations performed through ufuncs."""

    def __init__(self, value, counter):
        self.value = np.asarray(value)
        self.counter = counter

    @property
    def shape(self):
        return self.value.shape

    def __getitem__(self, idx):
        return Counted(self.value[idx], self.counter)

    def reshape(self, *shape):
        return Counted(self.value.reshape(*shape), self.counter)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        raw = [i.value if isinstance(i, Counted) else i for i in inputs]
        if ufunc is np.matmul:
            a, b = (np.asarray(r) for r in raw)
            out = ufunc(*raw, **kwargs)
            inner = a.shape[-1]
            self.counter.add("mul", out.size * inner)
            self.counter.add("add", out.size * (inner - 1))
            return Counted(out, self.counter)
        if ufunc not in _UFUNC_OPS:
            raise TypeError(f"uncounted ufunc {ufunc.__name__}")
        op = _UFUNC_OPS[ufunc]
        if method == "__call__":
            out = ufunc(*raw, **kwargs)
            self.counter.add(op, np.size(out))
        elif method == "reduce":
            out = ufunc.reduce(*raw, **kwargs)
            self.counter.add(op, np.size(raw[0]) - np.size(out))
        else:
            raise TypeError(f"uncounted ufunc method {method}")
        return Counted(out, self.counter)

    def sigmoid(self):
        self.counter.add("sigmoid", self.value.size)
        return Counted(1.0 / (1.0 + np.exp(-self.value)), self.counter)


def _counted_sum(a, axis):
    return np.add.reduce(a, axis=axis)


def _instrumented_sa(x, params, *, eps, enable_gn, enable_fc, fc_variant, shuffle_groups, enable_shuffle, counter):
    """Forward pass of SA on counted arrays; returns (output ndarray, counter)."""
    n, c, h, w = x.shape
    g = params.groups
    k = c // (2 * g)
    p = h * w
    fc = fc_variant if enable_fc else None
    cx = Counted(np.asarray(x, np.float64).reshape(n * g, 2, k, p), counter)
    pv = {name: np.asarray(a, np.float64) for name, a in params.arrays().items()}

    def gate_pre(v, wname, bname):
        # v: (m, k) or (m, p, k) with channels last
        if fc is None:
            return v
        if fc == "affine":
            return v * pv[wname] + pv[bname]
        return v @ pv[wname].T + pv[bname]

    x1, x2 = cx[:, 0], cx[:, 1]
    s = _counted_sum(x1, 2) / p
    g1 = gate_pre(s, "w1", "b1").sigmoid()
    y1 = x1 * g1.reshape(n * g, k, 1)

    if enable_gn:
        mu = _counted_sum(x2, 2) / p
        d = x2 - mu.reshape(n * g, k, 1)
        var = _counted_sum(d * d, 2) / p
        inv = 1.0 / np.sqrt(var + eps)
        xhat = d * inv.reshape(n * g, k, 1)
        z = xhat * pv["gn_gamma"].reshape(k, 1) + pv["gn_beta"].reshape(k, 1)
    else:
        z = x2
    zt = Counted(np.swapaxes(z.value, 1, 2), counter)  # channels last; layout only
    g2 = gate_pre(zt, "w2", "b2").sigmoid()
    y2 = x2 * Counted(np.swapaxes(g2.value, 1, 2), counter)

    y = np.stack([y1.value, y2.value], axis=1).reshape(n, c, h, w)
    if enable_shuffle:
        y = y.reshape(n, shuffle_groups, c // shuffle_groups, h, w).swapaxes(1, 2).reshape(n, c, h, w)
    return y, counter


def count_sa_flops(c, h, w, g, n=1, *, enable_gn=True, enable_fc=True, fc_variant="affine",
                   seed=0, return_output=False):
    """Operation count of SA measured by running a counted forward pass."""
    from .attention import SaParams
    from .tensor import Rng

    _check_sa_dims(c, g)
    rx, rp = Rng(seed).split(2)
    x = rx.normal((n, c, h, w), dtype=np.float64)
    params = SaParams.random(c, g, rp, fc_variant=fc_variant, scale=0.5, dtype=np.float64)
    counter = FlopCounter()
    y, _ = _instrumented_sa(
        x, params, eps=1e-5, enable_gn=enable_gn, enable_fc=enable_fc, fc_variant=fc_variant,
        shuffle_groups=2, enable_shuffle=True, counter=counter,
    )
    if return_output:
        return counter, (x, params, y)
    return counter


def count_se_flops(c, r=16, h=1, w=1, n=1, seed=0):
    from .tensor import Rng

    if r <= 0 or c % r:
        raise ConfigError(f"channel count C={c} is not divisible by reduction r={r}")
    rng = Rng(seed)
    counter = FlopCounter()
    x = Counted(rng.normal((n, c, h * w), dtype=np.float64), counter)
    fc1 = rng.normal((c, c // r), dtype=np.float64)
    fc2 = rng.normal((c // r, c), dtype=np.float64)
    s = _counted_sum(x, 2) / (h * w)
    hid = np.maximum(s @ fc1, 0.0)
    gate = (hid @ fc2).sigmoid()
    _ = x * gate.reshape(n, c, 1)
    return counter


@dataclass
class Stage:
    blocks: int
    channels: int
    spatial: int


@dataclass
class ModelDescriptor:
    """Shape-level description of a bottleneck ResNet for cost accounting."""

    name: str
    stages: list
    input_size: int = 224
    in_channels: int = 3
    stem_channels: int = 64
    num_classes: int = 1000
    expansion: int = 4

    def __post_init__(self):
        self.stages = [s if isinstance(s, Stage) else Stage(**s) for s in self.stages]
        if not self.stages:
            raise ConfigError("model descriptor needs at least one stage")
        for s in self.stages:
            if min(s.blocks, s.channels, s.spatial) <= 0:
                raise ConfigError(f"stage fields must be positive: {s}")
            if s.channels % self.expansion:
                raise ConfigError(f"stage width {s.channels} is not divisible by expansion {self.expansion}")
        if self.input_size % 4:
            raise ConfigError(f"input size {self.input_size} must be divisible by 4")

    @property
    def num_blocks(self):
        return sum(s.blocks for s in self.stages)

    @classmethod
    def preset(cls, name):
        blocks = {"resnet50": (3, 4, 6, 3), "resnet101": (3, 4, 23, 3)}
        if name not in blocks:
            raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(blocks)}")
        return cls(name, [Stage(b, c, s) for b, c, s in zip(blocks[name], (256, 512, 1024, 2048), (56, 28, 14, 7))])

    @classmethod
    def from_dict(cls, doc):
        try:
            stages = [Stage(int(s["blocks"]), int(s["channels"]), int(s["spatial"])) for s in doc["stages"]]
            extra = {k: int(doc[k]) for k in ("input_size", "in_channels", "stem_channels", "num_classes", "expansion") if k in doc}
            name = str(doc.get("name", "custom"))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise FormatError(f"malformed model descriptor: {exc!r}") from exc
        return cls(name=name, stages=stages, **extra)

    @classmethod
    def load(cls, source):
        """Preset name or path to a JSON descriptor."""
        if source in ("resnet50", "resnet101"):
            return cls.preset(source)
        try:
            doc = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read model descriptor {source!r}: {exc}") from exc
        return cls.from_dict(doc)


def backbone_cost(model):
    """(params, macs, per-stage list) for a torchvision-style bottleneck ResNet.

    Convs carry no bias and are followed by a 2-parameter-per-channel
    batch-norm; downsampling stride sits on the 3x3 conv.
    """
    stem_spatial = model.input_size // 2
    params = model.in_channels * model.stem_channels * 49 + 2 * model.stem_channels
    macs = model.in_channels * model.stem_channels * 49 * stem_spatial**2
    in_ch, in_sp = model.stem_channels, model.input_size // 4
    stages = []
    for s in model.stages:
        if in_sp % s.spatial:
            raise ConfigError(f"stage spatial {s.spatial} does not evenly divide previous spatial {in_sp}")
        mid = s.channels // model.expansion
        sp_params = sp_macs = 0
        for b in range(s.blocks):
            src_sp = in_sp if b == 0 else s.spatial
            sp_params += in_ch * mid + 9 * mid * mid + mid * s.channels + 2 * (2 * mid + s.channels)
            sp_macs += in_ch * mid * src_sp**2 + 9 * mid * mid * s.spatial**2 + mid * s.channels * s.spatial**2
            if in_ch != s.channels or src_sp != s.spatial:
                sp_params += in_ch * s.channels + 2 * s.channels
                sp_macs += in_ch * s.channels * s.spatial**2
            in_ch = s.channels
        in_sp = s.spatial
        params += sp_params
        macs += sp_macs
        stages.append((sp_params, sp_macs))
    params += in_ch * model.num_classes + model.num_classes
    macs += in_ch * model.num_classes
    return params, macs, stages


def parse_attention(text):
    """'none', 'sa:G' or 'se:r' -> (kind, value)."""
    if text in (None, "none"):
        return "none", None
    kind, _, value = str(text).partition(":")
    if kind not in ("sa", "se") or not value.isdigit() or int(value) <= 0:
        raise ConfigError(f"attention must be 'none', 'sa:G' or 'se:r', got {text!r}")
    return kind, int(value)


@dataclass
class CostReport:
    model: str
    attention: str
    params_base: int
    params_added: int
    flops_base: int
    flops_added: int
    stages: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    conventions: list = field(default_factory=lambda: [BASE_CONVENTION, ADDED_CONVENTION])

    @property
    def gflops_added(self):
        return self.flops_added / 1e9

    def to_dict(self):
        d = asdict(self)
        d["gflops_base"] = self.flops_base / 1e9
        d["gflops_added"] = self.gflops_added
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self):
        lines = [
            f"model {self.model}   attention {self.attention}",
            f"{'stage':>5} {'blocks':>6} {'channels':>8} {'spatial':>7} {'params_base':>12} {'params_added':>12} {'flops_added':>12}",
        ]
        for i, s in enumerate(self.stages, 1):
            lines.append(
                f"{i:>5} {s['blocks']:>6} {s['channels']:>8} {s['spatial']:>7} "
                f"{s['params_base']:>12,} {s['params_added']:>12,} {s['flops_added']:>12,}"
            )
        lines += [
            f"params: base {self.params_base:,}  added {self.params_added:,}  total {self.params_base + self.params_added:,}",
            f"GFLOPs: base {self.flops_base / 1e9:.3f}  added {self.gflops_added:.4e}",
        ]
        lines += [f"convention: {c}" for c in self.conventions]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def report(model, attention="none"):
    """Sum per-block attention costs over ``model`` and pair them with the backbone cost."""
    kind, value = parse_attention(attention)
    params_base, macs_base, base_stages = backbone_cost(model)
    stages, p_add, f_add = [], 0, 0
    for s, (sp_params, sp_macs) in zip(model.stages, base_stages):
        if kind == "sa":
            per_p, per_f = sa_cost(s.channels, s.spatial, s.spatial, value)
        elif kind == "se":
            per_p, per_f = se_cost(s.channels, value, s.spatial, s.spatial)
        else:
            per_p = per_f = 0
        stages.append({
            "blocks": s.blocks, "channels": s.channels, "spatial": s.spatial,
            "params_base": sp_params, "flops_base": sp_macs,
            "params_added": per_p * s.blocks, "flops_added": per_f * s.blocks,
        })
        p_add += per_p * s.blocks
        f_add += per_f * s.blocks
    label = "none" if kind == "none" else f"{kind}:{value}"
    rep = CostReport(model.name, label, params_base, p_add, macs_base, f_add, stages)
    if kind == "sa" and model.name == "resnet50" and value == 64:
        rep.notes.append(
            f"published figure is {REPORTED_SA_RESNET50['params_added']} added parameters; "
            f"summing 3C/G over all {model.num_blocks} blocks gives {p_add}"
        )
        half_elems = sum(s.blocks * s.channels * s.spatial**2 // 2 for s in model.stages)
        rep.notes.append(
            f"published figure is {REPORTED_SA_RESNET50['gflops_added']:.2e} GFLOPs added; the full "
            f"elementwise count is {rep.gflops_added:.3e}. The published value equals one op per "
            f"element of a single branch ({half_elems / 1e9:.3e} GFLOPs)"
        )
    return rep
