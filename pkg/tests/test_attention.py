import math

import numpy as np
import pytest

from sanet import ConfigError, ShapeError, reference
from sanet.attention import (
    ABLATION_VARIANTS, SaConfig, SaParams, channel_branch, group_norm_backward, group_norm_forward,
    sa_forward, se_forward, spatial_branch,
)
from sanet.tensor import Rng, channel_shuffle

SIG1 = 1.0 / (1.0 + math.exp(-1.0))


class TestChannelBranch:
    def test_init_gate(self):
        x = Rng(0).normal((2, 3, 4, 4))
        out = channel_branch(x, np.zeros(3, np.float32), np.ones(3, np.float32))
        np.testing.assert_allclose(out, 0.7310586 * x, rtol=1e-6)

    def test_constant_input_gate(self):
        v = np.array([-2.0, 0.5, 3.0], np.float32)
        x = np.broadcast_to(v[None, :, None, None], (1, 3, 2, 2)).copy()
        out = channel_branch(x, np.ones(3, np.float32), np.zeros(3, np.float32))
        np.testing.assert_allclose(out[0, :, 0, 0], v / (1 + np.exp(-v)), rtol=1e-6)

    def test_oracle(self):
        r = Rng(1)
        x, w, b = r.normal((1, 2, 3, 3)), r.normal((2,)), r.normal((2,))
        np.testing.assert_allclose(channel_branch(x, w, b), reference.channel_branch(x, w, b), atol=1e-6)


class TestSpatialBranch:
    def test_constant_input(self):
        x = np.full((1, 2, 3, 3), 4.0, np.float32)
        w2, b2 = np.array([0.7, -1.3], np.float32), np.array([0.2, -0.4], np.float32)
        out = spatial_branch(x, w2, b2, np.ones(2, np.float32), np.zeros(2, np.float32))
        gate = 1 / (1 + np.exp(-b2))
        np.testing.assert_allclose(out, gate[None, :, None, None] * x, rtol=1e-6)

    def test_init_gate(self):
        x = Rng(0).normal((2, 3, 4, 4))
        ones, zeros = np.ones(3, np.float32), np.zeros(3, np.float32)
        np.testing.assert_allclose(spatial_branch(x, zeros, ones, ones, zeros), 0.7310586 * x, rtol=1e-6)

    @pytest.mark.parametrize("with_gn", [True, False])
    def test_oracle(self, with_gn):
        r = Rng(2)
        x = r.normal((1, 2, 4, 4))
        w2, b2, gamma, beta = (r.normal((2,)) for _ in range(4))
        got = spatial_branch(x, w2, b2, gamma, beta, with_gn=with_gn)
        want = reference.spatial_branch(x, w2, b2, gamma, beta, with_gn=with_gn)
        np.testing.assert_allclose(got, want, atol=1e-5)


class TestGroupNorm:
    def test_normalized_statistics(self):
        x = Rng(3).normal((2, 4, 5, 5), scale=3.0, dtype=np.float64) + 7
        y, _ = group_norm_forward(x, np.ones(4), np.zeros(4))
        np.testing.assert_allclose(y.mean(axis=(2, 3)), 0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=(2, 3)), 1, atol=1e-5)

    def test_backward_sums(self):
        # the normalized output is invariant to per-channel shifts, so dx sums to zero
        x = Rng(4).normal((1, 3, 4, 4), dtype=np.float64)
        _, cache = group_norm_forward(x, Rng(5).normal((3,), dtype=np.float64), np.zeros(3))
        dx, _, dbeta = group_norm_backward(Rng(6).normal((1, 3, 4, 4), dtype=np.float64), cache)
        np.testing.assert_allclose(dx.sum(axis=(2, 3)), 0, atol=1e-12)


class TestSaForward:
    def test_init_transparency(self):
        x = Rng(0).normal((2, 32, 4, 4))
        out = sa_forward(x, SaParams.init(32, 4), SaConfig(groups=4))
        assert np.array_equal(out, np.float32(SIG1) * channel_shuffle(x, 2))

    def test_init_no_shuffle(self):
        x = Rng(1).normal((2, 32, 4, 4))
        out = sa_forward(x, SaParams.init(32, 4), SaConfig(groups=4, enable_shuffle=False))
        assert np.array_equal(out, np.float32(SIG1) * x)

    @pytest.mark.parametrize("variant", ABLATION_VARIANTS)
    def test_oracle_all_variants(self, variant):
        r = Rng(11)
        cfg = SaConfig.variant(variant, groups=4)
        x = r.normal((2, 32, 4, 4))
        params = SaParams.random(32, 4, r, fc_variant=cfg.fc_variant)
        np.testing.assert_allclose(sa_forward(x, params, cfg), reference.sa_forward(x, params, cfg), atol=1e-5)

    def test_minimal_width(self):
        r = Rng(12)
        x = r.normal((1, 16, 3, 3))
        params = SaParams.random(16, 8, r)
        cfg = SaConfig(groups=8)
        np.testing.assert_allclose(sa_forward(x, params, cfg), reference.sa_forward(x, params, cfg), atol=1e-5)

    def test_float64_path(self):
        r = Rng(13)
        x = r.normal((1, 8, 3, 3), dtype=np.float64)
        params = SaParams.random(8, 2, r, dtype=np.float64)
        out = sa_forward(x, params, SaConfig(groups=2))
        assert out.dtype == np.float64
        np.testing.assert_allclose(out, reference.sa_forward(x, params, SaConfig(groups=2)), atol=1e-12)

    def test_does_not_mutate_input(self):
        x = Rng(0).normal((1, 8, 2, 2))
        before = x.copy()
        sa_forward(x, SaParams.random(8, 2, Rng(1)), SaConfig(groups=2))
        assert np.array_equal(x, before)

    def test_divisibility_error_names_dims(self):
        with pytest.raises(ConfigError, match="C=12"):
            sa_forward(Rng(0).normal((1, 12, 2, 2)), SaParams.init(16, 4), SaConfig(groups=4))
        with pytest.raises(ConfigError, match="C=10"):
            SaConfig(groups=4).validate(10)

    def test_params_mismatch(self):
        with pytest.raises((ConfigError, ShapeError)):
            sa_forward(Rng(0).normal((1, 16, 2, 2)), SaParams.init(16, 2), SaConfig(groups=4))

    def test_rejects_non_finite(self):
        x = Rng(0).normal((1, 8, 2, 2))
        x[0, 0, 0, 0] = np.nan
        out = sa_forward(x, SaParams.init(8, 2), SaConfig(groups=2))
        assert np.isnan(out).any()  # propagated, not hidden


class TestSaParams:
    @pytest.mark.parametrize("c,g", [(256, 64), (2048, 64), (16, 8), (4, 2)])
    def test_count(self, c, g):
        assert SaParams.init(c, g).count() == 3 * c // g

    def test_conv_count(self):
        k = 4
        assert SaParams.init(32, 4, "conv").count() == 2 * k * k + 4 * k

    def test_init_values(self):
        p = SaParams.init(16, 2)
        assert np.all(p.w1 == 0) and np.all(p.b1 == 1) and np.all(p.w2 == 0) and np.all(p.b2 == 1)
        assert np.all(p.gn_gamma == 1) and np.all(p.gn_beta == 0)

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            SaParams(16, 2, *(np.zeros(3, np.float32) for _ in range(6)))

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            SaConfig.variant("wo_everything")


class TestSe:
    def test_zero_weights(self):
        x = Rng(0).normal((1, 8, 2, 2))
        out = se_forward(x, np.zeros((8, 4), np.float32), np.zeros((4, 8), np.float32), r=2)
        np.testing.assert_allclose(out, 0.5 * x)

    @pytest.mark.parametrize("v", [-1.5, 0.0, 2.0])
    def test_scalar_chain(self, v):
        x = np.full((1, 1, 2, 2), v, np.float32)
        out = se_forward(x, np.ones((1, 1), np.float32), np.ones((1, 1), np.float32), r=1)
        gate = 1 / (1 + math.exp(-max(v, 0.0)))
        np.testing.assert_allclose(out, gate * x, rtol=1e-6)

    def test_oracle(self):
        r = Rng(5)
        x, fc1, fc2 = r.normal((1, 8, 2, 2)), r.normal((8, 4)), r.normal((4, 8))
        np.testing.assert_allclose(se_forward(x, fc1, fc2, r=2), reference.se_forward(x, fc1, fc2), atol=1e-6)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            se_forward(Rng(0).normal((1, 8, 2, 2)), np.zeros((6, 4)), np.zeros((4, 8)))
