"""Fast in-package property suite backing ``sanet selftest``."""

import math

import numpy as np

from . import reference
from .accounting import count_sa_flops, sa_cost, sa_params_count
from .attention import ABLATION_VARIANTS, SaConfig, SaParams, sa_forward
from .grad import GradTape, backward, gradcheck_sa, random_sa_problem
from .io import dumps_satk, loads_satk, sa_params_from_dict, sa_params_to_dict
from .tensor import Rng, channel_shuffle, concat_channels, split_channels

SIGMOID_ONE = np.float32(1.0 / (1.0 + math.exp(-1.0)))


def check_param_identity(rng):
    for c, g in [(256, 64), (512, 64), (1024, 64), (2048, 64), (16, 8)]:
        assert SaParams.init(c, g).count() == 3 * c // g == sa_params_count(c, g)


def check_init_transparency(rng):
    for _ in range(5):
        x = rng.normal((2, 32, 4, 4))
        params = SaParams.init(32, 4)
        out = sa_forward(x, params, SaConfig(groups=4))
        assert np.array_equal(out, SIGMOID_ONE * channel_shuffle(x, 2))
        out = sa_forward(x, params, SaConfig(groups=4, enable_shuffle=False))
        assert np.array_equal(out, SIGMOID_ONE * x)


def check_shuffle_permutation(rng):
    for c, g in [(6, 2), (32, 4), (48, 6), (64, 64)]:
        x = rng.normal((2, c, 3, 3))
        y = channel_shuffle(x, g)
        assert np.array_equal(channel_shuffle(y, c // g), x)
        assert sorted(map(bytes, x[0])) == sorted(map(bytes, y[0]))


def check_split_concat(rng):
    for c, parts in [(4, 2), (48, 3), (64, 32), (7, 1)]:
        x = rng.normal((3, c, 5, 5))
        assert np.array_equal(concat_channels(split_channels(x, parts)), x)


def check_group_locality(rng):
    x = rng.normal((1, 32, 4, 4))
    params = SaParams.random(32, 4, rng)
    cfg = SaConfig(groups=4, enable_shuffle=False)
    base = sa_forward(x, params, cfg)
    x2 = x.copy()
    x2[:, 8:16] += 1.0
    out = sa_forward(x2, params, cfg)
    assert np.array_equal(out[:, :8], base[:, :8]) and np.array_equal(out[:, 16:], base[:, 16:])
    assert not np.array_equal(out[:, 8:16], base[:, 8:16])


def check_oracle(rng):
    for variant in ABLATION_VARIANTS:
        cfg = SaConfig.variant(variant, groups=4)
        x = rng.normal((2, 16, 3, 3))
        params = SaParams.random(16, 4, rng, fc_variant=cfg.fc_variant)
        diff = np.max(np.abs(sa_forward(x, params, cfg) - reference.sa_forward(x, params, cfg)))
        assert diff <= 1e-5, (variant, diff)


def check_gradients(rng):
    x, params, cfg = random_sa_problem((1, 8, 3, 3), 2, seed=int(rng.integers(0, 2**31)))
    report = gradcheck_sa(x, params, cfg)
    assert report.passed, report.to_table()


def check_tape_order(rng):
    tape = GradTape()
    x = rng.normal((1, 8, 2, 2))
    sa_forward(x, SaParams.init(8, 2), SaConfig(groups=2), tape=tape)
    backward(np.zeros_like(x), tape)
    assert tape.visited == [r.name for r in reversed(tape.records)]


def check_flop_formula(rng):
    for _ in range(5):
        g = int(rng.integers(1, 5))
        c = 2 * g * int(rng.integers(1, 5))
        h, w = (int(v) for v in rng.integers(1, 8, size=2))
        assert sa_cost(c, h, w, g)[1] == count_sa_flops(c, h, w, g).total


def check_serialization(rng):
    x = rng.normal((1, 3, 2, 5))
    assert np.array_equal(loads_satk(dumps_satk(x)), x)
    p = SaParams.random(16, 2, rng)
    q = sa_params_from_dict(sa_params_to_dict(p))
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays().values(), q.arrays().values()))


CHECKS = [
    ("parameter identity 3C/G", check_param_identity),
    ("init transparency", check_init_transparency),
    ("shuffle is a permutation", check_shuffle_permutation),
    ("split/concat round trip", check_split_concat),
    ("group locality without shuffle", check_group_locality),
    ("vectorized vs scalar oracle", check_oracle),
    ("analytic vs finite-difference gradients", check_gradients),
    ("tape replays in reverse", check_tape_order),
    ("flop formula vs instrumented count", check_flop_formula),
    ("SATK and SaParams round trip", check_serialization),
]


def run(seed=0):
    """Run every check; returns a list of (name, passed, message)."""
    results = []
    for i, (name, fn) in enumerate(CHECKS):
        try:
            fn(Rng(seed).split(len(CHECKS))[i])
            results.append((name, True, ""))
        except Exception as exc:  # report every failure, keep going
            results.append((name, False, f"{type(exc).__name__}: {exc}"))
    return results
