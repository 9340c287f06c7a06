import numpy as np
import pytest

from divkf import models
from divkf.errors import DomainError
from divkf.gaussian import GaussianBelief
from divkf.oracle import GridSpec, fd_gradient, grid_posterior_moments, reference_kf


def quadratic_model(noise_var=0.1):
    return models.MeasurementModel(lambda x: np.asarray(x, float) ** 2,
                                   lambda x: 2 * np.atleast_2d(np.asarray(x, float)),
                                   [[noise_var]], name="square")


class TestGrid:
    def test_conjugate(self):
        prior = GaussianBelief.from_moments([0.0], [[1.0]])
        post = grid_posterior_moments(prior, models.linear_model([[1.0]], [[1.0]]), [2.0])
        assert post.mean[0] == pytest.approx(1.0, abs=1e-6)
        assert post.covariance[0, 0] == pytest.approx(0.5, abs=1e-6)

    def test_symmetric_bimodal(self):
        prior = GaussianBelief.from_moments([0.0], [[1.0]])
        post = grid_posterior_moments(prior, quadratic_model(), [1.0])
        assert abs(post.mean[0]) < 1e-8

    def test_refinement(self):
        prior = GaussianBelief.from_moments([0.3], [[1.0]])
        model = quadratic_model()
        a = grid_posterior_moments(prior, model, [1.0], GridSpec((0.3,), (1.0,), 8, 2001))
        b = grid_posterior_moments(prior, model, [1.0], GridSpec((0.3,), (1.0,), 8, 4001))
        assert abs(a.mean[0] - b.mean[0]) < 1e-6
        assert abs(a.covariance[0, 0] - b.covariance[0, 0]) < 1e-6

    def test_two_d_conjugate(self):
        prior = GaussianBelief.from_moments([0.0, 1.0], [[1.0, 0.3], [0.3, 2.0]])
        H = np.array([[1.0, 1.0]])
        model = models.linear_model(H, [[0.5]])
        post = grid_posterior_moments(prior, model, [2.0])
        ref = reference_kf([[2.0]], np.eye(2), np.zeros((2, 2)), H, [[0.5]],
                           prior.mean, prior.covariance)[0]
        np.testing.assert_allclose(post.mean, ref.mean, atol=1e-5)
        np.testing.assert_allclose(post.covariance, ref.covariance, atol=1e-5)

    def test_tilted_linear_closed_form(self):
        # alpha-tilt of a Gaussian prior and likelihood with q = prior:
        # precision = 1 + alpha / R
        prior = GaussianBelief.from_moments([0.0], [[1.0]])
        post = grid_posterior_moments(prior, models.linear_model([[1.0]], [[1.0]]), [2.0],
                                      alpha=0.5)
        assert post.covariance[0, 0] == pytest.approx(1 / 1.5, abs=1e-6)
        assert post.mean[0] == pytest.approx(0.5 * 2.0 / 1.5, abs=1e-6)

    def test_rejects_high_dimension(self):
        prior = GaussianBelief.from_moments(np.zeros(3), np.eye(3))
        with pytest.raises(DomainError):
            grid_posterior_moments(prior, models.linear_model(np.eye(3), np.eye(3)), np.zeros(3))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            GridSpec((0.0,), (1.0,), 8, 100)
        with pytest.raises(ValueError):
            GridSpec((np.inf,), (1.0,))


class TestFdGradient:
    def test_quadratic(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])

        def fn(b):
            return float(b.mean @ A @ b.mean + np.sum(b.covariance * A))

        at = GaussianBelief.from_moments([0.3, -0.2], [[1.0, 0.2], [0.2, 0.5]])
        g = fd_gradient(fn, at, 1e-4)
        np.testing.assert_allclose(g.mean, 2 * A @ at.mean, atol=1e-8)
        np.testing.assert_allclose(g.cov, A, atol=1e-8)

    def test_entropy_gradient(self):
        at = GaussianBelief.from_moments([0.0, 0.0], [[2.0, 0.4], [0.4, 1.0]])
        g = fd_gradient(lambda b: 0.5 * np.linalg.slogdet(b.covariance)[1], at, 1e-5)
        np.testing.assert_allclose(g.cov, 0.5 * np.linalg.inv(at.covariance), atol=1e-5)

    def test_second_order(self):
        at = GaussianBelief.from_moments([0.4], [[1.0]])
        fn = lambda b: float(np.sin(3 * b.mean[0]))  # noqa: E731
        exact = 3 * np.cos(1.2)
        e1 = abs(fd_gradient(fn, at, 1e-3).mean[0] - exact)
        e2 = abs(fd_gradient(fn, at, 5e-4).mean[0] - exact)
        assert 3.0 < e1 / e2 < 5.0

    def test_step_range(self):
        at = GaussianBelief.from_moments([0.0], [[1.0]])
        with pytest.raises(ValueError):
            fd_gradient(lambda b: 0.0, at, 1e-2)


class TestReferenceKf:
    def test_one_step(self):
        out = reference_kf([[2.0]], [[1.0]], [[0.0]], [[1.0]], [[1.0]], [0.0], [[1.0]])
        assert out[0].mean[0] == pytest.approx(1.0)
        assert out[0].covariance[0, 0] == pytest.approx(0.5)

    def test_riccati_converges(self):
        ys = np.zeros((300, 1))
        out = reference_kf(ys, [[1.0]], [[0.1]], [[1.0]], [[1.0]], [0.0], [[5.0]])
        diffs = [np.linalg.norm(a.covariance - b.covariance) for a, b in zip(out[100:], out[101:])]
        assert max(diffs) < 1e-12
