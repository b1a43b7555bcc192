"""Desk-scale training harness for SA/SE inside a small residual network."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..accounting import sa_params_count
from ..attention import SaConfig
from ..exceptions import ConfigError, NonFiniteError
from ..io import load_param_blob, save_param_blob, save_sa_params
from ..tensor import Rng
from .nn import ChannelNorm, Conv2d, GlobalAvgPool, Linear, ReLU, ResidualBlock, SALayer, Sequential, make_attention, softmax_cross_entropy


@dataclass
class ToyNetConfig:
    channels: tuple = (16, 32, 64)
    blocks: int = 2
    attention: str = "none"  # none | sa | se
    groups: int = 8
    reduction: int = 8
    variant: str = "origin"  # ablation row applied when attention == "sa"
    shuffle_groups: int = 2
    classes: int = 4
    input_size: int = 32

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.attention not in ("none", "sa", "se"):
            raise ConfigError(f"attention must be none, sa or se, got {self.attention!r}")
        if self.blocks <= 0 or self.classes < 2 or not self.channels:
            raise ConfigError("blocks and channels must be positive and classes >= 2")
        if self.attention == "sa":
            cfg = self.sa_config()
            for c in self.channels:
                cfg.validate(c)
        if self.attention == "se":
            for c in self.channels:
                if c % self.reduction:
                    raise ConfigError(f"channel count C={c} is not divisible by reduction r={self.reduction}")

    def sa_config(self):
        return SaConfig.variant(self.variant, groups=self.groups, shuffle_groups=self.shuffle_groups)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_epochs: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr < 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0 or self.warmup_epochs < 0:
            raise ConfigError("lr, momentum, weight_decay and warmup_epochs must be non-negative (momentum < 1)")

    def lr_at(self, epoch, step=0, steps_per_epoch=1):
        """Step decay x0.1 at 1/3 and 2/3 of the run, with optional linear warm-up."""
        if epoch < self.warmup_epochs:
            return self.lr * (epoch * steps_per_epoch + step + 1) / (self.warmup_epochs * steps_per_epoch)
        drops = sum(epoch >= m for m in (self.epochs // 3, 2 * self.epochs // 3) if m > 0)
        return self.lr * 0.1**drops


@dataclass
class SyntheticDataset:
    """Noisy oriented bars; class k is a bar at angle k*pi/classes.

    Labels cycle through the classes so both splits are balanced; the
    validation split is drawn from an independent child stream.
    """

    seed: int = 0
    n_train: int = 256
    n_val: int = 128
    classes: int = 4
    size: int = 32
    noise: float = 0.35
    X_train: np.ndarray = field(init=False, repr=False)
    y_train: np.ndarray = field(init=False, repr=False)
    X_val: np.ndarray = field(init=False, repr=False)
    y_val: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_train <= 0 or self.n_val < 0:
            raise ConfigError("n_train must be positive and n_val non-negative")
        rtrain, rval = Rng(self.seed).split(2)
        self.X_train, self.y_train = self._generate(self.n_train, rtrain)
        self.X_val, self.y_val = self._generate(self.n_val, rval)

    def _generate(self, count, rng):
        labels = np.arange(count) % self.classes
        half = (self.size - 1) / 2
        yy, xx = np.mgrid[0:self.size, 0:self.size] - half
        jitter = rng.uniform((count,), -0.15, 0.15, dtype=np.float64)
        centers = rng.uniform((count, 2), -self.size / 5, self.size / 5, dtype=np.float64)
        width = rng.uniform((count,), 1.0, 2.5, dtype=np.float64)
        noise = rng.normal((count, 1, self.size, self.size), self.noise)
        angles = labels * math.pi / self.classes + jitter
        dist = ((xx[None] - centers[:, 0, None, None]) * np.sin(angles)[:, None, None]
                - (yy[None] - centers[:, 1, None, None]) * np.cos(angles)[:, None, None])
        bars = np.exp(-dist**2 / (2 * width[:, None, None] ** 2))
        return (bars[:, None] + noise).astype(np.float32), labels.astype(np.int64)


class ToyResNet(Sequential):
    def __init__(self, cfg, rng):
        streams = rng.split(len(cfg.channels) * cfg.blocks + 2)
        it = iter(streams)
        layers = dict(stem=Conv2d(1, cfg.channels[0], 3, next(it), stride=2), stem_norm=ChannelNorm(cfg.channels[0]), stem_relu=ReLU())
        in_ch = cfg.channels[0]
        sa_cfg = cfg.sa_config() if cfg.attention == "sa" else None
        for si, ch in enumerate(cfg.channels):
            for b in range(cfg.blocks):
                r = next(it)
                ra, rb = r.split(2)
                stride = 2 if (si > 0 and b == 0) else 1
                attn = make_attention(cfg.attention, ch, ra, sa_cfg, cfg.reduction)
                layers[f"stage{si + 1}_block{b}"] = ResidualBlock(in_ch, ch, stride, rb, attn)
                in_ch = ch
        layers["pool"] = GlobalAvgPool()
        layers["fc"] = Linear(in_ch, cfg.classes, next(it))
        super().__init__(**layers)
        self.cfg = cfg

    def parameters(self):
        return list(self.named_parameters())

    def parameter_count(self):
        return sum(layer.params[key].size for _, layer, key in self.parameters())

    def sa_layers(self):
        return [(name, block.layers["attn"]) for name, block in self.layers.items()
                if isinstance(block, ResidualBlock) and isinstance(block.layers.get("attn"), SALayer)]

    def state_dict(self):
        return {name: layer.params[key].copy() for name, layer, key in self.parameters()}

    def load_state_dict(self, state):
        for name, layer, key in self.parameters():
            if name not in state:
                raise KeyError(f"missing parameter {name}")
            layer.params[key][...] = np.asarray(state[name]).reshape(layer.params[key].shape)

    def predict_logits(self, X, batch_size=128):
        return np.concatenate([self.forward(X[i:i + batch_size]) for i in range(0, len(X), batch_size)])


def build(cfg, rng):
    """Toy residual network; SA modules start at the zero-weight, unit-bias initialization."""
    return ToyResNet(cfg, rng)


def expected_sa_parameter_delta(cfg):
    return cfg.blocks * sum(sa_params_count(c, cfg.groups, cfg.sa_config().fc_variant) for c in cfg.channels)


class SGD:
    """SGD with momentum; weight decay is added to the gradient before the lr-scaled step."""

    def __init__(self, parameters, momentum=0.9, weight_decay=1e-4):
        self.parameters = parameters
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(layer.params[key]) for name, layer, key in parameters}

    def step(self, lr):
        for name, layer, key in self.parameters:
            p = layer.params[key]
            v = self.velocity[name]
            v *= self.momentum
            v += layer.grads[key] + self.weight_decay * p
            p -= np.float32(lr) * v


@dataclass
class History:
    rows: list = field(default_factory=list)

    def append(self, epoch, loss, train_acc, val_acc):
        self.rows.append({"epoch": epoch, "loss": loss, "train_acc": train_acc, "val_acc": val_acc})

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["epoch", "loss", "train_acc", "val_acc"], lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_json(self):
        return json.dumps(self.rows, indent=1)

    def __getitem__(self, i):
        return self.rows[i]

    def __len__(self):
        return len(self.rows)


def evaluate(model, X, y):
    """Top-1 accuracy over a split."""
    if len(X) == 0:
        raise ValueError("cannot evaluate on an empty split")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} samples but {len(y)} labels")
    if np.max(y) >= model.cfg.classes:
        raise ConfigError(f"labels reach {int(np.max(y))} but the model has {model.cfg.classes} classes")
    pred = model.predict_logits(X).argmax(axis=1)
    return float(np.mean(pred == y))


def train(model, data, tc, X_val=None, y_val=None):
    """Cross-entropy training. ``data`` is a SyntheticDataset or an (X, y) pair."""
    if isinstance(data, SyntheticDataset):
        X, y = data.X_train, data.y_train
        if X_val is None and data.n_val:
            X_val, y_val = data.X_val, data.y_val
    else:
        X, y = data
    if len(X) == 0:
        raise ValueError("training set is empty")
    rng = Rng(tc.seed).split(1)[0]
    opt = SGD(model.parameters(), tc.momentum, tc.weight_decay)
    history = History()
    steps = math.ceil(len(X) / tc.batch_size)
    for epoch in range(tc.epochs):
        order = rng.permutation(len(X))
        total_loss = correct = 0.0
        for step in range(steps):
            idx = order[step * tc.batch_size:(step + 1) * tc.batch_size]
            logits = model.forward(X[idx])
            loss, dlogits = softmax_cross_entropy(logits, y[idx])
            if not math.isfinite(loss):
                raise NonFiniteError(f"non-finite loss {loss} at epoch {epoch}, batch {step}")
            model.zero_grad()
            model.backward(dlogits)
            opt.step(tc.lr_at(epoch, step, steps))
            total_loss += loss * len(idx)
            correct += float(np.sum(logits.argmax(axis=1) == y[idx]))
        val_acc = evaluate(model, X_val, y_val) if X_val is not None and len(X_val) else float("nan")
        history.append(epoch, total_loss / len(X), correct / len(X), val_acc)
    return history


def save_checkpoint(model, directory):
    """Flat float32 blob + manifest for every parameter, plus SaParams JSON per SA module."""
    directory = Path(directory)
    save_param_blob(directory, [(name, layer.params[key]) for name, layer, key in model.parameters()])
    (directory / "model_config.json").write_text(json.dumps(asdict(model.cfg), indent=1))
    for name, layer in model.sa_layers():
        save_sa_params(directory / f"sa_{name}.json", layer.sa)


def load_checkpoint(directory):
    directory = Path(directory)
    cfg = ToyNetConfig(**json.loads((directory / "model_config.json").read_text()))
    model = build(cfg, Rng(0))
    model.load_state_dict(load_param_blob(directory))
    return model
