import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sanet import reference
from sanet.accounting import count_sa_flops, sa_cost
from sanet.attention import ABLATION_VARIANTS, SaConfig, SaParams, sa_forward
from sanet.io import dumps_satk, loads_satk
from sanet.tensor import Rng, channel_shuffle, concat_channels, sigmoid, split_channels

settings.register_profile("sanet", deadline=None, max_examples=40)
settings.load_profile("sanet")


@st.composite
def sa_case(draw, max_groups=4, max_width=3):
    g = draw(st.integers(1, max_groups))
    k = draw(st.integers(1, max_width))
    n, h, w = draw(st.integers(1, 2)), draw(st.integers(1, 4)), draw(st.integers(1, 4))
    return (n, 2 * g * k, h, w), g, draw(st.integers(0, 2**31 - 1))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_shuffle_is_invertible_permutation(g, q, seed):
    c = g * q
    x = Rng(seed).normal((2, c, 2, 2))
    y = channel_shuffle(x, g)
    assert np.array_equal(channel_shuffle(y, q), x)
    assert sorted(map(bytes, y[0])) == sorted(map(bytes, x[0]))


@given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_split_concat_round_trip(parts, width, seed):
    x = Rng(seed).normal((1, parts * width, 3, 2))
    pieces = split_channels(x, parts)
    assert len(pieces) == parts and all(p.shape[1] == width for p in pieces)
    assert np.array_equal(concat_channels(pieces), x)


@given(sa_case(), st.sampled_from(ABLATION_VARIANTS))
def test_output_shape_and_oracle(case, variant):
    shape, g, seed = case
    cfg = SaConfig.variant(variant, groups=g)
    rx, rp = Rng(seed).split(2)
    x = rx.normal(shape)
    params = SaParams.random(shape[1], g, rp, fc_variant=cfg.fc_variant)
    out = sa_forward(x, params, cfg)
    assert out.shape == x.shape and out.dtype == x.dtype
    assert np.max(np.abs(out - reference.sa_forward(x, params, cfg))) <= 1e-5


@given(sa_case())
def test_init_transparency(case):
    shape, g, seed = case
    x = Rng(seed).normal(shape)
    out = sa_forward(x, SaParams.init(shape[1], g), SaConfig(groups=g))
    assert np.array_equal(out, sigmoid(np.ones((1, 1, 1, 1), np.float32)).item() * channel_shuffle(x, 2))


@given(sa_case(max_groups=4), st.data())
def test_group_locality_without_shuffle(case, data):
    shape, g, seed = case
    c = shape[1]
    per = c // g
    target = data.draw(st.integers(0, g - 1))
    cfg = SaConfig(groups=g, enable_shuffle=False)
    rx, rp = Rng(seed).split(2)
    x = rx.normal(shape)
    params = SaParams.random(c, g, rp)
    x2 = x.copy()
    x2[:, target * per:(target + 1) * per] *= -2.0
    a, b = sa_forward(x, params, cfg), sa_forward(x2, params, cfg)
    outside = np.ones(c, bool)
    outside[target * per:(target + 1) * per] = False
    assert np.array_equal(a[:, outside], b[:, outside])


@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 6), st.integers(1, 6), st.integers(1, 2),
       st.booleans(), st.sampled_from([None, "affine", "conv"]))
def test_flop_formula_matches_counter(g, k, h, w, n, gn, fc):
    c = 2 * g * k
    kw = dict(enable_gn=gn, enable_fc=fc is not None, fc_variant=fc or "affine")
    assert sa_cost(c, h, w, g, n, **kw)[1] == count_sa_flops(c, h, w, g, n, **kw).total


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=4, max_dims=4, min_side=1, max_side=4),
                  elements=st.floats(width=32, allow_nan=True, allow_infinity=True)))
def test_satk_round_trip_is_bit_exact(x):
    y = loads_satk(dumps_satk(x))
    assert y.shape == x.shape and np.array_equal(x.view(np.uint32), y.view(np.uint32))


@given(hnp.arrays(np.float32, (1, 3, 2, 2), elements=st.floats(-1e4, 1e4, width=32)))
def test_sigmoid_bounded_and_monotone(x):
    y = sigmoid(x)
    assert np.all((y >= 0) & (y <= 1))
    order = np.argsort(x.ravel(), kind="stable")
    assert np.all(np.diff(y.ravel()[order]) >= 0)
