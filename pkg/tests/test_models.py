import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divkf import models
from divkf.errors import DomainError, SingularPoint
from divkf.models import OptionContract

# 100 (2 Phi(0.1) - 1) evaluated with a 30-digit error function
ATM_PRICE = 7.96556745540579


class TestDynamics:
    def test_cv_blocks(self):
        dyn = models.cv_dynamics(1.0, 1e-2)
        np.testing.assert_array_equal(dyn.F[:2, :2], [[1.0, 1.0], [0.0, 1.0]])
        np.testing.assert_allclose(dyn.Q[:2, :2], [[0.0025, 0.005], [0.005, 0.01]])
        np.testing.assert_array_equal(dyn.F[:2, 2:], 0.0)
        np.testing.assert_array_equal(dyn.Q[2:, :2], 0.0)

    def test_unit_velocity_kinematics(self):
        dyn = models.cv_dynamics(1.0, 0.3)
        np.testing.assert_allclose(dyn.propagate([0.0, 1.0, 0.0, 2.0]), [1.0, 1.0, 2.0, 2.0])

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 10.0), st.floats(1e-6, 10.0))
    def test_cv_noise_psd(self, dt, s):
        Q = models.cv_dynamics(dt, s).Q
        np.testing.assert_array_equal(Q, Q.T)
        assert np.linalg.eigvalsh(Q).min() >= -1e-12 * np.abs(Q).max()

    def test_noise_factor_reproduces_singular_q(self):
        dyn = models.cv_dynamics(1.0, 0.5)
        A = dyn.noise_factor()
        np.testing.assert_allclose(A @ A.T, dyn.Q, atol=1e-14)

    def test_propagate_noise_covariance(self):
        dyn = models.cv_dynamics(1.0, 1.0)
        x = dyn.propagate(np.zeros((200_000, 4)), np.random.default_rng(0))
        np.testing.assert_allclose(np.cov(x, rowvar=False), dyn.Q, atol=0.01)

    def test_random_walk(self):
        dyn = models.random_walk_dynamics(2, 1e-2)
        np.testing.assert_array_equal(dyn.F, np.eye(2))
        np.testing.assert_allclose(dyn.Q, 1e-4 * np.eye(2))

    def test_isotropic_override(self):
        dyn = models.with_isotropic_noise(models.cv_dynamics(1.0, 0.01), 0.1)
        np.testing.assert_allclose(dyn.Q, 0.01 * np.eye(4))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            models.LinearDynamics(np.eye(2), np.eye(3))


class TestRadar:
    def test_forward(self):
        np.testing.assert_allclose(models.radar_h([1000.0, 10.0, 1000.0, 10.0]),
                                   [1414.2135623730951, 0.7853981633974483], rtol=1e-12)

    def test_noise(self):
        np.testing.assert_allclose(models.radar_model().R.matrix, np.diag([0.1, 0.01]))

    def test_jacobian_fd(self):
        x = np.array([3.0, 0.0, 4.0, 0.0])
        step = 1e-5
        fd = np.zeros((2, 4))
        for i in range(4):
            e = np.zeros(4)
            e[i] = step
            fd[:, i] = (models.radar_h(x + e) - models.radar_h(x - e)) / (2 * step)
        assert np.max(np.abs(models.radar_jacobian(x) - fd)) < 1e-6

    def test_origin_is_singular(self):
        with pytest.raises(SingularPoint):
            models.radar_jacobian(np.zeros(4))

    def test_full_quadrant(self):
        assert models.radar_h([-1.0, 0.0, -1.0, 0.0])[1] == pytest.approx(-3 * np.pi / 4)

    @pytest.mark.parametrize("k", [-2, -1, 0, 1, 2])
    def test_residual_wrapping(self, k):
        m = models.radar_model()
        rng = np.random.default_rng(k + 10)
        for _ in range(20):
            th, th2 = rng.uniform(-np.pi, np.pi, 2)
            a = m.residual([5.0, th + 2 * np.pi * k], [5.0, th2])
            b = m.residual([5.0, th], [5.0, th2])
            assert a[1] == pytest.approx(b[1], abs=1e-12)
            assert -np.pi < a[1] <= np.pi

    def test_wrap_angle_range(self):
        w = models.wrap_angle(np.array([np.pi, -np.pi, 3 * np.pi, 0.1]))
        np.testing.assert_allclose(w, [np.pi, np.pi, np.pi, 0.1])

    def test_invert(self):
        y = models.radar_h(np.array([30.0, 0.0, -40.0, 0.0]))
        np.testing.assert_allclose(models.radar_invert(y), [30.0, -40.0])

    def test_likelihood_matches_gaussian(self):
        m = models.radar_model()
        y = np.array([1414.0, 0.8])
        x = np.array([1000.0, 0.0, 1000.0, 0.0])
        r = y - models.radar_h(x)
        ref = -0.5 * (r[0] ** 2 / 0.1 + r[1] ** 2 / 0.01) - 0.5 * np.log((2 * np.pi) ** 2 * 1e-3)
        assert m.log_likelihood(y, x) == pytest.approx(ref, rel=1e-12)


class TestSensor:
    def test_345(self):
        layout = models.SensorLayout(np.zeros((1, 2)), 1)
        m = models.sensor_model(layout, [0], 1.0)
        assert m.h(np.array([3.0, 0.0, 4.0, 0.0]))[0] == pytest.approx(5.0)

    def test_noise(self):
        layout = models.uniform_layout(np.random.default_rng(0), [0, 0], [100, 100])
        m = models.sensor_model(layout, [0, 1, 2], 20.0)
        np.testing.assert_allclose(m.R.matrix, 400 * np.eye(3))
        assert layout.count == 200 and layout.active_per_step == 3

    def test_jacobian_fd(self):
        rng = np.random.default_rng(3)
        layout = models.uniform_layout(rng, [0, 0], [100, 100], 10)
        m = models.sensor_model(layout, [1, 4, 7], 20.0)
        for _ in range(5):
            x = rng.uniform(0, 100, 4)
            step = 1e-5
            fd = np.column_stack([(m.h(x + step * e) - m.h(x - step * e)) / (2 * step)
                                  for e in np.eye(4)])
            assert np.max(np.abs(m.jacobian(x) - fd)) < 1e-6

    def test_singular_on_sensor(self):
        layout = models.SensorLayout(np.array([[1.0, 2.0], [5.0, 5.0]]), 2)
        m = models.sensor_model(layout, [0, 1], 1.0)
        with pytest.raises(SingularPoint):
            m.jacobian(np.array([1.0, 0.0, 2.0, 0.0]))

    def test_duplicate_ids(self):
        layout = models.SensorLayout(np.zeros((3, 2)), 2)
        with pytest.raises(ValueError):
            models.sensor_model(layout, [1, 1], 1.0)

    def test_nearest(self):
        layout = models.SensorLayout(np.array([[0.0, 0.0], [10.0, 0.0], [2.0, 0.0], [5, 5]]), 2)
        np.testing.assert_array_equal(layout.nearest([1.9, 0.0]), [2, 0])

    def test_too_many_active(self):
        with pytest.raises(ValueError):
            models.SensorLayout(np.zeros((2, 2)), 3)


class TestBlackScholes:
    def test_atm(self):
        c = OptionContract(100.0, 1.0, 100.0)
        np.testing.assert_allclose(models.black_scholes_price([0.2, 0.0], c),
                                   [ATM_PRICE, ATM_PRICE], rtol=1e-10)

    def test_deep_in_the_money_limit(self):
        c = OptionContract(100.0, 1.0, 110.0)
        call, put = models.black_scholes_price([1e-4, 0.0], c)
        assert abs(call - 10.0) < 1e-3 and abs(put) < 1e-3

    def test_nonpositive_sigma(self):
        with pytest.raises(DomainError):
            models.black_scholes_price([0.0, 0.01], OptionContract(100.0, 1.0, 100.0))

    def test_invalid_contract(self):
        with pytest.raises(DomainError):
            OptionContract(100.0, 0.0, 100.0)

    def test_parity_seeded(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            S, X = rng.uniform(20, 200, 2)
            r, sig, t = rng.uniform(-0.02, 0.1), rng.uniform(0.05, 1.0), rng.uniform(0.01, 3.0)
            call, put = models.black_scholes_price([sig, r], OptionContract(X, t, S))
            rhs = S - X * np.exp(-r * t)
            assert abs(call - put - rhs) <= 1e-9 * max(S, X)

    def test_noise(self):
        m = models.black_scholes_model(OptionContract(100.0, 0.5, 100.0), 1e-2)
        np.testing.assert_allclose(m.R.matrix, 1e-4 * np.eye(2))

    @pytest.mark.parametrize("mode", ["analytic", "fd"])
    def test_jacobian_fd(self, mode):
        c = OptionContract(100.0, 0.5, 95.0)
        m = models.black_scholes_model(c, 1e-2, mode)
        x = np.array([0.2, 0.05])
        step = 1e-6
        fd = np.column_stack([(m.h(x + step * e) - m.h(x - step * e)) / (2 * step)
                              for e in np.eye(2)])
        assert np.max(np.abs(m.jacobian(x) - fd)) < 1e-5

    def test_clamp_keeps_h_finite(self):
        m = models.black_scholes_model(OptionContract(100.0, 0.5, 100.0), 1e-2)
        y = m.h(np.array([[-0.3, 0.02], [0.2, 0.02]]))
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y[0], models.black_scholes_price(
            [models.SIGMA_FLOOR, 0.02], OptionContract(100.0, 0.5, 100.0)))


def test_jacobians_agree_with_fd_at_random_points():
    rng = np.random.default_rng(99)
    layout = models.uniform_layout(rng, [-500, -500], [500, 500], 20)
    checks = [
        (models.radar_model(), lambda: rng.uniform(-2000, 2000, 4)),
        (models.sensor_model(layout, [0, 5, 9], 20.0), lambda: rng.uniform(-600, 600, 4)),
        (models.black_scholes_model(OptionContract(100.0, 0.4, 100.0), 0.01),
         lambda: np.array([rng.uniform(0.05, 0.8), rng.uniform(0.0, 0.1)])),
    ]
    for model, draw in checks:
        for _ in range(100):
            x = draw()
            J = model.jacobian(x)
            fd = models.fd_jacobian(model.h, x)
            scale = np.maximum(np.abs(J), 1e-3 * np.abs(J).max())
            assert np.max(np.abs(J - fd) / scale) < 1e-4
