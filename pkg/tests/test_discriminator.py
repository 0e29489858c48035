import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stan_eeg.discriminator import (
    DiscriminatorConfig,
    DiscriminatorParams,
    MLPCritic,
    critic_risk,
    discriminator_loss,
    extract_features,
    gradient_penalty,
    score,
)
from stan_eeg.errors import ConfigError, ContractError, InputTooShortError, ShapeError
from stan_eeg.model import StanConfig, StanModel
from stan_eeg.ndtensor import Tape, Tensor, numerical_grad, relative_error
from stan_eeg.nn import parameters
from stan_eeg.optim import Adam

from conftest import assert_grads

STAN = StanConfig(M=2, H=2, n=6, T=17, spatial_dim=4, temporal_dim=5)
DCFG = DiscriminatorConfig(spatial_kernel=3, temporal_kernel=4, temporal_stride=4, spatial_filters=2,
                           temporal_filters=2, feature_dim=6, fc_units=5, fc_layers=2, dropout_p=0.0)


class LinearCritic:
    def __init__(self, w):
        self.w = np.asarray(w, dtype=np.float64)

    def input_gradient(self, f):
        return Tensor(np.broadcast_to(self.w, f.shape).copy())


class ConstantCritic:
    def input_gradient(self, f):
        return Tensor(np.zeros(f.shape))


def maps_for(rng, batch=3, seed=0):
    model = StanModel.create(STAN, seed)
    return model.attention_maps(rng.standard_normal((batch, STAN.n, STAN.T)))


def mlp_oracle(F, params):
    """Logit and input gradient of the ReLU MLP in plain numpy, one row at a time."""
    logits, grads = [], []
    for f in F:
        h, gates = f, []
        for layer in params.fc:
            pre = h @ layer.w.data + layer.b.data
            gates.append(pre > 0)
            h = np.maximum(pre, 0)
        logits.append(float(h @ params.head.w.data[:, 0] + params.head.b.data[0]))
        g = params.head.w.data[:, 0]
        for layer, gate in zip(reversed(params.fc), reversed(gates)):
            g = layer.w.data @ (g * gate)
        grads.append(g)
    return np.array(logits), np.array(grads)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"feature_dim": 0}, {"lambda_gp": -1.0}, {"dropout_p": 1.0}, {"fusion": "max"}])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            DiscriminatorConfig(**kw)


class TestExtractFeatures:
    def test_default_output_length(self, rng):
        stan = StanConfig(M=3, H=4, n=6, T=17, spatial_dim=4, temporal_dim=4)
        params = DiscriminatorParams.init(DiscriminatorConfig(), stan, rng)
        maps = StanModel.create(stan, 0).attention_maps(rng.standard_normal((stan.n, stan.T)))
        assert extract_features(maps, DiscriminatorConfig(), params).shape == (6 * 512,)

    def test_sum_fusion_width(self, rng):
        cfg = DiscriminatorConfig(**{**DCFG.to_dict(), "fusion": "sum"})
        params = DiscriminatorParams.init(cfg, STAN, rng)
        assert extract_features(maps_for(rng), cfg, params).shape == (3, cfg.feature_dim)

    def test_zero_maps_zero_features(self, rng):
        params = DiscriminatorParams.init(DCFG, STAN, rng)
        maps = maps_for(rng)
        for m in maps.all():
            m.values = Tensor(np.zeros(m.values.shape))
        assert not extract_features(maps, DCFG, params).data.any()

    def test_locality_probe(self, rng):
        params = DiscriminatorParams.init(DCFG, STAN, rng)
        for ext in (params.spatial, params.temporal):
            ext.conv_b.data[:] = 0
            ext.lin.b.data[:] = 0
        maps = maps_for(rng, batch=1)
        base = extract_features(maps, DCFG, params, use_relu=False).data
        maps.temporal[0].values = Tensor(2 * maps.temporal[0].values.data)
        probed = extract_features(maps, DCFG, params, use_relu=False).data
        d = DCFG.feature_dim
        changed = 2 * d  # slice of temporal map 0, after the two spatial slices
        np.testing.assert_array_equal(np.delete(base, np.s_[changed:changed + d], axis=-1),
                                      np.delete(probed, np.s_[changed:changed + d], axis=-1))
        np.testing.assert_allclose(probed[..., changed:changed + d], 2 * base[..., changed:changed + d], rtol=1e-12)

    def test_conv_matches_loop(self, rng):
        params = DiscriminatorParams.init(DCFG, STAN, rng)
        maps = maps_for(rng, batch=1)
        feats = extract_features(maps, DCFG, params).data[0]
        ext, a = params.temporal, maps.temporal[1].values.data[0]
        k, s = ext.conv_w.shape[-1], ext.stride
        side = (a.shape[-1] - k) // s + 1
        conv = np.zeros((ext.conv_w.shape[0], side, side))
        for f in range(conv.shape[0]):
            for i in range(side):
                for j in range(side):
                    conv[f, i, j] = np.sum(a[:, i * s:i * s + k, j * s:j * s + k] * ext.conv_w.data[f]) + ext.conv_b.data[f, 0, 0]
        ref = np.maximum(conv.reshape(-1) @ ext.lin.w.data + ext.lin.b.data, 0)
        np.testing.assert_allclose(feats[3 * DCFG.feature_dim:], ref, rtol=1e-12, atol=1e-12)

    def test_maps_smaller_than_kernel(self, rng):
        with pytest.raises(InputTooShortError):
            DiscriminatorParams.init(DiscriminatorConfig(), StanConfig(M=1, n=4, T=8), rng)


class TestScore:
    def test_logit_zero_gives_half(self, rng):
        params = DiscriminatorParams.init(DCFG, STAN, rng)
        params.head.w.data[:] = 0
        params.head.b.data[:] = 0
        _, out = score(Tensor(rng.standard_normal((2, 24))), params)
        np.testing.assert_array_equal(out.risk, 0.5)

    def test_risk_is_sigmoid_of_logit_and_monotone(self, rng):
        params = DiscriminatorParams.init(DCFG, STAN, rng)
        _, out = score(Tensor(rng.standard_normal((50, 24))), params)
        np.testing.assert_allclose(out.risk, 1 / (1 + np.exp(-out.logit)), rtol=1e-15)
        order = np.argsort(out.logit)
        assert np.all(np.diff(out.risk[order]) >= 0)

    def test_single_vector(self, rng):
        params = DiscriminatorParams.init(DCFG, STAN, rng)
        F = rng.standard_normal(24)
        _, one = score(Tensor(F), params)
        _, batch = score(Tensor(F[None]), params)
        assert one.logit.shape == () and one.logit == batch.logit[0]

    def test_deterministic_without_dropout(self, rng):
        F = Tensor(rng.standard_normal((4, 24)))
        a = score(F, DiscriminatorParams.init(DCFG, STAN, np.random.default_rng(3)))[1].logit
        b = score(F, DiscriminatorParams.init(DCFG, STAN, np.random.default_rng(3)))[1].logit
        assert np.array_equal(a, b)

    def test_critic_risk_in_unit_interval(self, rng):
        params = DiscriminatorParams.init(DCFG, STAN, rng)
        risk = critic_risk(maps_for(rng), DCFG, params).risk
        assert np.all((risk > 0) & (risk < 1))


class TestGradientPenalty:
    def test_unit_linear_critic(self, rng):
        w = rng.standard_normal(7)
        gp = gradient_penalty(Tensor(rng.standard_normal((5, 7))), Tensor(rng.standard_normal((5, 7))),
                              LinearCritic(w / np.linalg.norm(w)), rng=rng)
        assert abs(gp.item()) <= 1e-10

    def test_constant_critic(self, rng):
        gp = gradient_penalty(Tensor(rng.standard_normal((5, 7))), Tensor(rng.standard_normal((5, 7))),
                              ConstantCritic(), rng=rng)
        assert gp.item() == 1.0

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            gradient_penalty(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3))), ConstantCritic(), rng=rng)

    def test_mlp_input_gradient_matches_finite_differences(self, rng):
        params = DiscriminatorParams.init(DCFG, STAN, rng)
        critic = MLPCritic(params, DCFG)
        f = Tensor(rng.standard_normal((1, 24)), requires_grad=True)
        analytic = critic.input_gradient(f).data
        numeric = numerical_grad(lambda: critic(f)[0], f, 1e-6)
        assert relative_error(analytic, numeric) < 1e-3
        gp = gradient_penalty(f, f, critic, alpha=np.array([0.5])).item()
        assert gp == pytest.approx((np.linalg.norm(numeric) - 1) ** 2, rel=1e-3)

    def test_penalty_gradients_wrt_critic_weights(self, rng):
        params = DiscriminatorParams.init(DCFG, STAN, rng)
        critic = MLPCritic(params, DCFG)
        fi, fp = Tensor(rng.standard_normal((3, 24))), Tensor(rng.standard_normal((3, 24)))
        alpha = rng.uniform(size=3)
        assert_grads(lambda: gradient_penalty(fi, fp, critic, alpha=alpha), [l.w for l in params.fc] + [params.head.w])


class TestDiscriminatorLoss:
    def constant_params(self, rng):
        params = DiscriminatorParams.init(DCFG, STAN, rng)
        params.head.w.data[:] = 0
        return params

    def test_constant_critic_no_penalty(self, rng):
        cfg = DiscriminatorConfig(**{**DCFG.to_dict(), "lambda_gp": 0.0})
        maps = maps_for(rng)
        assert discriminator_loss(maps, maps, self.constant_params(rng), cfg, rng).loss.item() == 0.0

    def test_constant_critic_composition(self, rng):
        cfg = DiscriminatorConfig(**{**DCFG.to_dict(), "lambda_gp": 0.05})
        terms = discriminator_loss(maps_for(rng, seed=1), maps_for(rng, seed=2), self.constant_params(rng), cfg, rng)
        assert terms.gp == 1.0
        assert terms.loss.item() == pytest.approx(0.05, abs=1e-15)

    def test_two_sample_scalar_oracle(self, rng):
        cfg = DiscriminatorConfig(**{**DCFG.to_dict(), "lambda_gp": 0.05})
        params = DiscriminatorParams.init(cfg, STAN, rng)
        mi, mp = maps_for(rng, 2, seed=1), maps_for(rng, 2, seed=2)
        alpha = np.array([0.3, 0.8])
        terms = discriminator_loss(mi, mp, params, cfg, alpha=alpha)
        Fi, Fp = extract_features(mi, cfg, params).data, extract_features(mp, cfg, params).data
        li, _ = mlp_oracle(Fi, params)
        lp, _ = mlp_oracle(Fp, params)
        _, g = mlp_oracle(alpha[:, None] * Fi + (1 - alpha[:, None]) * Fp, params)
        gp = np.mean((np.sqrt((g * g).sum(axis=1)) - 1) ** 2)
        expected = (lp[0] + lp[1]) / 2 - (li[0] + li[1]) / 2 + 0.05 * gp
        assert abs(terms.loss.item() - expected) <= 1e-12
        assert abs(terms.gp - gp) <= 1e-12

    def test_bce_objective(self, rng):
        params = DiscriminatorParams.init(DCFG, STAN, rng)
        mi, mp = maps_for(rng, 2, seed=1), maps_for(rng, 2, seed=2)
        terms = discriminator_loss(mi, mp, params, DCFG, objective="bce")
        li, _ = mlp_oracle(extract_features(mi, DCFG, params).data, params)
        lp, _ = mlp_oracle(extract_features(mp, DCFG, params).data, params)
        expected = 0.5 * (np.mean(np.log1p(np.exp(-li))) + np.mean(np.log1p(np.exp(lp))))
        assert terms.loss.item() == pytest.approx(expected, rel=1e-12)
        with pytest.raises(ConfigError):
            discriminator_loss(mi, mp, params, DCFG, objective="hinge")

    def test_empty_batch(self, rng):
        params = DiscriminatorParams.init(DCFG, STAN, rng)
        maps = maps_for(rng)
        with pytest.raises(ContractError):
            discriminator_loss(maps.select(slice(0, 0)), maps, params, DCFG, rng)

    def test_one_step_separates_classes(self, rng):
        cfg = DiscriminatorConfig(**{**DCFG.to_dict(), "lambda_gp": 0.05})
        params = DiscriminatorParams.init(cfg, STAN, np.random.default_rng(4))
        mi, mp = maps_for(rng, 8, seed=1), maps_for(rng, 8, seed=1)
        for m in mp.all():
            m.values = Tensor(np.roll(m.values.data, 1, axis=-1))  # a different, still stochastic map

        def gap():
            li = critic_risk(mi, cfg, params).logit
            lp = critic_risk(mp, cfg, params).logit
            return li.mean() - lp.mean()

        before = gap()
        opt = Adam(parameters(params), lr=1e-3)
        with Tape() as tape:
            terms = discriminator_loss(mi, mp, params, cfg, np.random.default_rng(0))
            tape.backward(terms.loss)
        opt.step()
        assert gap() > before


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_penalty_nonnegative(seed):
    rng = np.random.default_rng(seed)
    params = DiscriminatorParams.init(DCFG, STAN, rng)
    gp = gradient_penalty(Tensor(rng.standard_normal((4, 24))), Tensor(rng.standard_normal((4, 24))),
                          MLPCritic(params, DCFG), rng=rng)
    assert gp.item() >= 0
