import logging

import numpy as np
import pytest

from divkf import adf, models
from divkf.gaussian import GaussianBelief, WeightedEnsemble
from divkf.oracle import reference_kf
from divkf.particle import ParticleState, pf_step, systematic_resample


def linear_setup():
    dyn = models.random_walk_dynamics(1, 0.5)
    model = models.linear_model([[1.0]], [[1.0]])
    return dyn, model


class TestResample:
    def test_indices_valid(self):
        rng = np.random.default_rng(0)
        w = rng.dirichlet(np.ones(50))
        idx = systematic_resample(w, rng)
        assert idx.shape == (50,) and idx.min() >= 0 and idx.max() < 50

    def test_point_mass(self):
        w = np.zeros(10)
        w[3] = 1.0
        np.testing.assert_array_equal(systematic_resample(w, np.random.default_rng(1)), 3)

    def test_counts_within_one(self):
        rng = np.random.default_rng(2)
        w = rng.dirichlet(np.ones(20))
        counts = np.bincount(systematic_resample(w, rng), minlength=20)
        assert np.all(np.abs(counts - 20 * w) < 1.0 + 1e-12)

    def test_mean_preserved_in_expectation(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(200)
        w = rng.dirichlet(np.ones(200) * 0.5)
        target = w @ x
        means = np.array([x[systematic_resample(w, rng)].mean() for _ in range(200)])
        se = means.std(ddof=1) / np.sqrt(len(means))
        assert abs(means.mean() - target) < 3 * se


class TestStep:
    def test_uniform_after_resample_and_ess_bounds(self):
        dyn, model = linear_setup()
        rng = np.random.default_rng(4)
        state = ParticleState.from_belief(GaussianBelief.from_moments([0.0], [[1.0]]), 500, rng)
        for t in range(10):
            state, _ = pf_step(state, dyn, model, [0.3 * t], rng)
            np.testing.assert_array_equal(state.ensemble.log_weights, 0.0)
            assert 1.0 <= state.last_ess <= 500
            assert state.step_count == t + 1

    def test_tight_likelihood_concentrates(self):
        dyn = models.random_walk_dynamics(1, 0.1)
        model = models.linear_model([[1.0]], [[1e-8]])
        rng = np.random.default_rng(5)
        state = ParticleState.from_belief(GaussianBelief.from_moments([0.0], [[1.0]]), 200, rng)
        x = state.ensemble.particles[:, 0]
        _, summary = pf_step(state, dyn, model, [0.4], rng)
        nearest = x[np.argmin(np.abs(x - 0.4))]
        assert summary.mean[0] == pytest.approx(nearest, abs=1e-6)

    def test_collapse_falls_back(self, caplog):
        dyn, _ = linear_setup()
        model = models.MeasurementModel(lambda x: np.asarray(x, float),
                                        lambda x: np.eye(1), [[1.0]])
        rng = np.random.default_rng(6)
        state = ParticleState.from_belief(GaussianBelief.from_moments([0.0], [[1.0]]), 100, rng)
        with caplog.at_level(logging.WARNING):
            new, summary = pf_step(state, dyn, model, [1e200], rng)
        assert new.collapsed
        assert np.all(np.isfinite(summary.mean))
        assert "collapsed" in caplog.text

    def test_large_log_likelihood_no_overflow(self):
        dyn, _ = linear_setup()
        model = models.linear_model([[1.0]], [[1e-3]])
        rng = np.random.default_rng(7)
        state = ParticleState.from_belief(GaussianBelief.from_moments([0.0], [[1.0]]), 1000, rng)
        new, summary = pf_step(state, dyn, model, [1.0], rng)
        assert not new.collapsed and np.all(np.isfinite(summary.covariance))

    def test_empty_rejected(self):
        dyn, model = linear_setup()
        state = ParticleState(WeightedEnsemble.uniform(np.zeros((0, 1))))
        with pytest.raises(ValueError):
            pf_step(state, dyn, model, [0.0], np.random.default_rng(0))

    def test_determinism(self):
        dyn, model = linear_setup()

        def run():
            rng = np.random.default_rng(8)
            state = ParticleState.from_belief(GaussianBelief.from_moments([0.0], [[1.0]]), 300,
                                              rng, dyn)
            out = []
            for y in [0.1, 0.5, -0.2]:
                state, s = pf_step(state, dyn, model, [y], rng)
                out.append(s.mean[0])
            return out, state.ensemble.particles

        a, b = run(), run()
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])


def test_tracks_exact_kf():
    dyn, model = linear_setup()
    rng = np.random.default_rng(9)
    truth = np.cumsum(rng.normal(0, 0.5, 50))
    ys = (truth + rng.standard_normal(50))[:, None]
    ref = reference_kf(ys, dyn.F, dyn.Q, [[1.0]], [[1.0]], [0.0], [[1.0]])
    init = GaussianBelief.from_moments([0.0], [[1.0]])
    state = ParticleState.from_belief(init, 100_000, rng, dyn)
    hits = 0
    for y, r in zip(ys, ref):
        state, summary = pf_step(state, dyn, model, y, rng)
        hits += abs(summary.mean[0] - r.mean[0]) <= 3 * np.sqrt(r.covariance[0, 0])
    assert hits >= 0.95 * len(ys)
    # the gaussian prior handed in matches adf.predict in this setup
    assert adf.predict(init, dyn).covariance[0, 0] == pytest.approx(1.25)
