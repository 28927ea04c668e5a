"""Information-maximization objective contracts and oracle agreements."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralbayes import bayes, mim, nn, oracles
from neuralbayes import tensor as T
from neuralbayes.errors import ConfigError, DomainError
from neuralbayes.tensor import Tensor

LOG2 = math.log(2.0)


def random_posterior(b, k, seed):
    logits = np.random.default_rng(seed).standard_normal((b, k))
    return bayes.PosteriorBatch(T.softmax_rows(Tensor(logits)))


class TestClosedFormMI:
    def test_constant_posterior_is_zero(self):
        # dyadic entries make the column mean bit-exact, so MI is exactly 0
        q = np.array([0.25, 0.25, 0.5])
        p = bayes.PosteriorBatch(Tensor(np.tile(q, (8, 1))))
        assert mim.mi_closed_form(p).item() == 0.0
        # for arbitrary entries the mean rounds, leaving at most ulp-level MI
        q = np.array([0.1, 0.2, 0.7])
        p = bayes.PosteriorBatch(Tensor(np.tile(q, (8, 1))))
        assert abs(mim.mi_closed_form(p).item()) <= 1e-15

    def test_one_hot_balanced_reaches_log_k(self):
        p = bayes.PosteriorBatch(Tensor(np.eye(4)))
        expected = oracles.brute_force_mi(np.eye(4))
        assert abs(mim.mi_closed_form(p).item() - expected) <= 1e-12
        assert abs(expected - math.log(4)) <= 1e-12

    def test_matches_brute_force_on_random_batches(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            b, k = int(rng.integers(1, 33)), int(rng.integers(2, 6))
            p = random_posterior(b, k, seed + 1000)
            got = mim.mi_closed_form(p).item()
            want = oracles.brute_force_mi(p.values.data)
            assert abs(got - want) <= 1e-10, (seed, got, want)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 64), st.integers(2, 8), st.integers(0, 99_999))
    def test_bounds(self, b, k, seed):
        v = mim.mi_closed_form(random_posterior(b, k, seed)).item()
        assert -1e-12 <= v <= math.log(k) + 1e-9


class TestV1Loss:
    def test_forward_value_is_negative_mi(self):
        p = random_posterior(16, 4, seed=0)
        loss = mim.mim_v1_loss(p, eps=0.0).item()
        assert abs(loss + mim.mi_closed_form(p).item()) <= 1e-12

    def test_constant_posterior_value_zero(self):
        p = bayes.PosteriorBatch(Tensor(np.tile([0.25, 0.75], (6, 1))))
        assert abs(mim.mim_v1_loss(p, eps=1e-7).item()) <= 1e-6

    def test_one_hot_balanced_value(self):
        p = bayes.PosteriorBatch(Tensor(np.eye(3)))
        assert abs(mim.mim_v1_loss(p, eps=0.0).item() + math.log(3)) <= 1e-12

    def test_gradient_equals_live_mi_gradient(self):
        # the stop-gradient loss must carry the FULL gradient of -MI
        for seed in (0, 1, 2):
            rng = np.random.default_rng(seed)
            net = nn.build_mlp(3, [6], 4, seed=seed, softmax_head=True, activation="tanh")
            batch = rng.standard_normal((12, 3))
            params = net.parameters()

            out = net.forward(Tensor(batch))
            loss = mim.mim_v1_loss(bayes.PosteriorBatch(out), eps=0.0)
            analytic = T.gradients(loss, params)

            originals = {n: p.data for n, p in params.items()}

            def live_neg_mi(values):
                for n, p in params.items():
                    p.data = values[n]
                try:
                    o = net.forward(Tensor(batch)).data
                    prior = o.mean(axis=0)
                    return -float((o * (np.log(o) - np.log(prior))).sum(axis=1).mean())
                finally:
                    for n, p in params.items():
                        p.data = originals[n]

            numeric = oracles.finite_diff_grad(live_neg_mi, {n: p.data for n, p in params.items()})
            for name in params:
                rel = np.abs(analytic[name] - numeric[name]) / np.maximum(1.0, np.abs(analytic[name]))
                assert rel.max() <= 1e-4, (seed, name, rel.max())


class TestPriorPenalties:
    def test_v1_uniform_value(self):
        prior = bayes.PriorEstimate(Tensor([0.5, 0.5]), sample_count=10)
        assert abs(mim.uniform_prior_penalty_v1(prior).item() + LOG2) <= 1e-12

    def test_v1_peaked_value_near_zero(self):
        prior = bayes.PriorEstimate(Tensor([1.0, 0.0]), sample_count=10)
        assert abs(mim.uniform_prior_penalty_v1(prior, eps=1e-7).item()) <= 1e-6

    def test_v1_gradient_equal_entries_at_uniform(self):
        values = Tensor(np.full(4, 0.25), requires_grad=True)
        prior = bayes.PriorEstimate(values, sample_count=10)
        mim.uniform_prior_penalty_v1(prior).backward()
        np.testing.assert_allclose(values.grad, values.grad[0], atol=1e-12)

    def test_v2_uniform_value_k2(self):
        prior = bayes.PriorEstimate(Tensor([0.5, 0.5]), sample_count=10)
        assert abs(mim.uniform_prior_penalty_v2(prior).item() - 2 * LOG2) <= 1e-12

    def test_v2_gradient_vanishes_at_uniform(self):
        for k in (2, 3, 5):
            values = Tensor(np.full(k, 1.0 / k), requires_grad=True)
            prior = bayes.PriorEstimate(values, sample_count=10)
            mim.uniform_prior_penalty_v2(prior).backward()
            assert np.abs(values.grad).max() <= 1e-9, k

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 99_999))
    def test_v2_minimized_at_uniform(self, k, seed):
        logits = np.random.default_rng(seed).standard_normal(k)
        p = np.exp(logits) / np.exp(logits).sum()
        random_val = mim.uniform_prior_penalty_v2(
            bayes.PriorEstimate(Tensor(p), sample_count=1)).item()
        uniform_val = mim.uniform_prior_penalty_v2(
            bayes.PriorEstimate(Tensor(np.full(k, 1.0 / k)), sample_count=1)).item()
        assert random_val >= uniform_val - 1e-12


class TestGradientStrength:
    def test_v2_root_at_uniform(self):
        for k in (2, 4, 8):
            _, v2 = mim.prior_gradient_strength(1.0 / k, k)
            assert abs(v2) <= 1e-12

    def test_near_collapse_values(self):
        v1, v2 = mim.prior_gradient_strength(0.999, 2)
        assert abs(abs(v1) - 1.0005e-3) <= 1e-6
        assert abs(abs(v2) - 499.5) <= 0.01
        assert abs(v2 / v1) > 100

    def test_half_value(self):
        v1, _ = mim.prior_gradient_strength(0.5, 2)
        assert abs(v1 + LOG2) <= 1e-12

    def test_boundary_rejected(self):
        with pytest.raises(DomainError):
            mim.prior_gradient_strength(0.0, 2)
        with pytest.raises(DomainError):
            mim.prior_gradient_strength(1.0, 2)

    def test_monotone_strength_near_one(self):
        ps = np.linspace(0.901, 0.999, 50)
        v1 = np.array([abs(mim.prior_gradient_strength(p, 2)[0]) for p in ps])
        v2 = np.array([abs(mim.prior_gradient_strength(p, 2)[1]) for p in ps])
        assert np.all(np.diff(v2) > 0)
        assert np.all(np.diff(v1) < 0)


class TestCollectStates:
    def test_dense_taps_never_pooled(self):
        states = [Tensor(np.random.default_rng(i).standard_normal((4, 6))) for i in range(4)]
        sc = mim.collect_states(states, mim.MimConfig(use_scales=False))
        assert len(sc) == 4
        sc2 = mim.collect_states(states, mim.MimConfig(use_scales=True))
        assert len(sc2) == 4  # no spatial axes, nothing to pool

    def test_spatial_taps_add_pooled_copies(self):
        rng = np.random.default_rng(0)
        states = [Tensor(rng.standard_normal((2, 3, 8, 8))) for _ in range(4)]
        sc = mim.collect_states(states, mim.MimConfig(use_scales=True))
        assert len(sc) == 8
        ids = [s.state_id for s in sc]
        assert ids[:4] == ["h0", "h1", "h2", "h3"] and ids[4:] == [
            "h0_pooled", "h1_pooled", "h2_pooled", "h3_pooled"]
        assert sc.states[4].values.shape == (2, 3, 4, 4)

    def test_every_location_is_a_posterior(self):
        rng = np.random.default_rng(1)
        states = [Tensor(rng.standard_normal((3, 4, 2, 2))), Tensor(rng.standard_normal((3, 5)))]
        sc = mim.collect_states(states, mim.MimConfig(use_scales=True))
        for _, pb in sc.location_posteriors():
            assert abs(pb.values.data.sum(axis=1) - 1.0).max() <= 1e-9


class TestV2Loss:
    def test_single_state_reduction(self):
        p = random_posterior(10, 3, seed=2)
        cfg = mim.MimConfig(alpha=0.0, beta=0.0, epsilon=1e-7)
        sc = mim.StateCollection((mim.SoftmaxState("h0", p.values),))
        total, report = mim.mim_v2_loss(sc, cfg)
        v = p.values
        mi_term = -float((v.data * np.log(v.data + 1e-7)).sum(axis=1).mean())
        prior = v.data.mean(axis=0)
        rp = -float((np.log(prior + 1e-7) / 3 + 2 / 3 * np.log(1 - prior + 1e-7)).sum())
        assert abs(total.item() - (mi_term + rp)) <= 1e-12
        assert abs(report.total - total.item()) <= 1e-15

    def test_uniform_point_value(self):
        cfg = mim.MimConfig(alpha=0.0, beta=0.0, epsilon=1e-9)
        values = Tensor(np.full((6, 2), 0.5))
        sc = mim.StateCollection((mim.SoftmaxState("h0", values),))
        total, _ = mim.mim_v2_loss(sc, cfg)
        assert abs(total.item() - 3 * LOG2) <= 1e-6  # entropy log2 + penalty 2*log2

    def test_report_parts_sum(self):
        rng = np.random.default_rng(3)
        states = [Tensor(rng.standard_normal((8, 4))), Tensor(rng.standard_normal((8, 4, 2, 2)))]
        sc = mim.collect_states(states, mim.MimConfig(use_scales=True))
        cfg = mim.MimConfig(alpha=1.5, beta=2.0)
        rc = Tensor(np.asarray(0.37))
        total, report = mim.mim_v2_loss(sc, cfg, rc)
        assert abs(report.total - (report.mi_term + report.prior_term + report.smooth_term)) <= 1e-12
        assert abs(report.smooth_term - 2.0 * 0.37) <= 1e-12

    def test_spatial_state_averages_locations(self):
        rng = np.random.default_rng(4)
        flat = rng.standard_normal((5, 3))
        spatial = np.stack([flat] * 4, axis=-1).reshape(5, 3, 2, 2)  # same posterior at 4 locations
        cfg = mim.MimConfig(alpha=0.0, beta=0.0)
        a, _ = mim.mim_v2_loss(mim.collect_states([Tensor(flat)], cfg), cfg)
        b, _ = mim.mim_v2_loss(mim.collect_states([Tensor(spatial)], cfg), cfg)
        assert abs(a.item() - b.item()) <= 1e-12

    def test_v1_prior_form_switch(self):
        p = random_posterior(10, 3, seed=5)
        cfg = mim.MimConfig(alpha=0.0, beta=0.0)
        sc = mim.StateCollection((mim.SoftmaxState("h0", p.values),))
        v2_total, _ = mim.mim_v2_loss(sc, cfg, prior_form="v2")
        v1_total, _ = mim.mim_v2_loss(sc, cfg, prior_form="v1")
        assert v1_total.item() != v2_total.item()
        assert abs(v1_total.item() - mim.mim_v1_loss(p, eps=cfg.epsilon).item()) <= 1e-12

    def test_empty_collection_rejected(self):
        with pytest.raises(ConfigError):
            mim.mim_v2_loss(mim.StateCollection(()), mim.MimConfig())

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            mim.MimConfig(epsilon=0.0)
        with pytest.raises(ConfigError):
            mim.MimConfig(alpha=-1.0)
