"""Dynamics and measurement models for the tracking and options experiments.

Measurement functions are vectorized: ``h`` maps a state of shape (d,) to
(p,) and a batch (n, d) to (n, p). Jacobians take a single state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.special import ndtr

from .errors import DomainError, SingularPoint
from .gaussian import SpdMatrix, _frozen, cholesky

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
_SINGULAR_RANGE = 1e-9
_LOG_2PI = np.log(2.0 * np.pi)


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class LinearDynamics:
    """x_t = F x_{t-1} + w_t with w_t ~ N(0, Q).

    ``Q`` only needs to be positive semidefinite: the constant-velocity noise
    block is rank one.
    """

    F: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        F, Q = np.atleast_2d(self.F), np.atleast_2d(self.Q)
        if F.shape[0] != F.shape[1] or Q.shape != F.shape:
            raise ValueError(f"inconsistent dynamics shapes F{F.shape} Q{Q.shape}")
        object.__setattr__(self, "F", _frozen(F))
        object.__setattr__(self, "Q", _frozen(0.5 * (Q + Q.T)))

    @property
    def dim(self) -> int:
        return self.F.shape[0]

    def noise_factor(self) -> np.ndarray:
        """A matrix A with A A^T = Q, valid for singular Q."""
        vals, vecs = np.linalg.eigh(self.Q)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))

    def propagate(self, x, rng: np.random.Generator | None = None) -> np.ndarray:
        """Push state(s) through F, adding process noise when ``rng`` is given."""
        x = np.asarray(x, dtype=float)
        out = x @ self.F.T
        if rng is not None:
            z = rng.standard_normal(out.shape)
            out = out + z @ self.noise_factor().T
        return out


@dataclass(frozen=True, eq=False)
class MeasurementModel:
    """y = h(x) + v with v ~ N(0, R)."""

    h: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    R: SpdMatrix
    wrap: tuple[bool, ...] = ()
    name: str = "custom"

    def __post_init__(self):
        if not isinstance(self.R, SpdMatrix):
            object.__setattr__(self, "R", cholesky(self.R))
        if not self.wrap:
            object.__setattr__(self, "wrap", (False,) * self.R.dim)
        if len(self.wrap) != self.R.dim:
            raise ValueError("wrap flags must match the measurement dimension")

    @property
    def dim(self) -> int:
        return self.R.dim

    @property
    def wrap_mask(self) -> np.ndarray:
        return np.array(self.wrap, dtype=bool)

    def residual(self, y, yhat) -> np.ndarray:
        """y - yhat with flagged components wrapped into (-pi, pi]."""
        r = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
        if any(self.wrap):
            mask = self.wrap_mask
            r = np.array(r, copy=True)
            r[..., mask] = wrap_angle(r[..., mask])
        return r

    def sq_error(self, y, X) -> np.ndarray:
        """Quadratic form r^T R^{-1} r of the residual at each state."""
        r = self.residual(y, self.h(X))
        r2 = np.atleast_2d(r)
        z = linalg.solve_triangular(self.R.factor, r2.T, lower=True)
        out = np.sum(z * z, axis=0)
        return out if np.ndim(r) > 1 else out[0]

    def log_likelihood(self, y, X):
        """log N(y; h(x), R) for a state or each row of a batch."""
        return -0.5 * self.sq_error(y, X) - 0.5 * (self.dim * _LOG_2PI + self.R.logdet())


def linear_model(H, R, name: str = "linear") -> MeasurementModel:
    H = _frozen(np.atleast_2d(H))
    return MeasurementModel(
        h=lambda x: np.asarray(x, dtype=float) @ H.T,
        jacobian=lambda x: H,
        R=cholesky(R),
        name=name,
    )


def fd_jacobian(h: Callable, x, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of ``h`` at ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = step * max(1.0, abs(x[i]))
        cols.append((np.asarray(h(x + e)) - np.asarray(h(x - e))) / (2 * e[i]))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# dynamics


def cv_dynamics(dt: float, sigma_cv: float) -> LinearDynamics:
    """Constant-velocity model in the plane, state [x1, v1, x2, v2]."""
    if dt <= 0 or sigma_cv < 0:
        raise ValueError("need dt > 0 and sigma_cv >= 0")
    F2 = np.array([[1.0, dt], [0.0, 1.0]])
    Q2 = sigma_cv * np.array([[dt**4 / 4, dt**3 / 2], [dt**3 / 2, dt**2]])
    Z = np.zeros((2, 2))
    return LinearDynamics(np.block([[F2, Z], [Z, F2]]), np.block([[Q2, Z], [Z, Q2]]))


def random_walk_dynamics(dim: int, sigma_q: float) -> LinearDynamics:
    return LinearDynamics(np.eye(dim), sigma_q**2 * np.eye(dim))


def with_isotropic_noise(dyn: LinearDynamics, sigma_q: float) -> LinearDynamics:
    """Same transition, process noise replaced by sigma_q^2 I."""
    return LinearDynamics(dyn.F, sigma_q**2 * np.eye(dyn.dim))


# ---------------------------------------------------------------------------
# radar


def radar_h(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    px, py = x[..., 0], x[..., 2]
    return np.stack([np.hypot(px, py), np.arctan2(py, px)], axis=-1)


def radar_jacobian(x) -> np.ndarray:
    px, py = float(x[0]), float(x[2])
    r2 = px * px + py * py
    r = np.sqrt(r2)
    if r < _SINGULAR_RANGE:
        raise SingularPoint("radar Jacobian undefined at the origin")
    return np.array([[px / r, 0.0, py / r, 0.0], [-py / r2, 0.0, px / r2, 0.0]])


def radar_model(sigma_r2: float = 0.1, sigma_theta2: float = 0.01) -> MeasurementModel:
    """Range and bearing from the origin; the bearing residual is wrapped."""
    if sigma_r2 <= 0 or sigma_theta2 <= 0:
        raise ValueError("variances must be positive")
    return MeasurementModel(
        h=radar_h,
        jacobian=radar_jacobian,
        R=cholesky(np.diag([sigma_r2, sigma_theta2])),
        wrap=(False, True),
        name="radar",
    )


def radar_invert(y) -> np.ndarray:
    """Polar measurement back to a Cartesian position (x1, x2)."""
    y = np.asarray(y, dtype=float)
    return np.stack([y[..., 0] * np.cos(y[..., 1]), y[..., 0] * np.sin(y[..., 1])], axis=-1)


# ---------------------------------------------------------------------------
# sensor network


@dataclass(frozen=True, eq=False)
class SensorLayout:
    positions: np.ndarray
    active_per_step: int = 3

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[1] != 2 or not np.all(np.isfinite(pos)):
            raise ValueError("sensor positions must be finite 2-D coordinates")
        if not 1 <= self.active_per_step <= pos.shape[0]:
            raise ValueError("active_per_step must be between 1 and the sensor count")
        object.__setattr__(self, "positions", _frozen(pos))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def nearest(self, position) -> np.ndarray:
        """Ids of the ``active_per_step`` sensors closest to ``position``, nearest first."""
        dist = np.linalg.norm(self.positions - np.asarray(position, dtype=float), axis=1)
        return np.argsort(dist, kind="stable")[: self.active_per_step]


def uniform_layout(rng: np.random.Generator, lower, upper, count: int = 200,
                   active_per_step: int = 3) -> SensorLayout:
    """``count`` sensors uniform on the axis-aligned box [lower, upper]."""
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    return SensorLayout(rng.uniform(lower, upper, size=(count, 2)), active_per_step)


def sensor_model(layout: SensorLayout, active_ids, sigma_R: float) -> MeasurementModel:
    """Range-only measurements from the listed sensors to the target position."""
    ids = np.asarray(active_ids, dtype=int)
    if len(set(ids.tolist())) != ids.size:
        raise ValueError("active sensor ids must be distinct")
    if ids.size == 0 or ids.min() < 0 or ids.max() >= layout.count:
        raise ValueError("active sensor id out of range")
    sensors = _frozen(layout.positions[ids])

    def h(x):
        x = np.asarray(x, dtype=float)
        pos = np.stack([x[..., 0], x[..., 2]], axis=-1)
        return np.linalg.norm(pos[..., None, :] - sensors, axis=-1)

    def jac(x):
        diff = np.array([x[0], x[2]], dtype=float) - sensors
        r = np.linalg.norm(diff, axis=1)
        if np.any(r < _SINGULAR_RANGE):
            raise SingularPoint("target coincides with an active sensor")
        J = np.zeros((ids.size, 4))
        J[:, 0] = diff[:, 0] / r
        J[:, 2] = diff[:, 1] / r
        return J

    return MeasurementModel(h=h, jacobian=jac, R=cholesky(sigma_R**2 * np.eye(ids.size)),
                            name="sensor")


# ---------------------------------------------------------------------------
# options


@dataclass(frozen=True)
class OptionContract:
    strike: float
    time_to_maturity: float
    spot: float

    def __post_init__(self):
        if self.strike <= 0 or self.time_to_maturity <= 0 or self.spot <= 0:
            raise DomainError("strike, time to maturity and spot must be positive")


def _bs_parts(sigma, r, c: OptionContract):
    sqrt_t = np.sqrt(c.time_to_maturity)
    d1 = (np.log(c.spot / c.strike) + (r + 0.5 * sigma**2) * c.time_to_maturity) / (sigma * sqrt_t)
    d2 = d1 - sigma * sqrt_t
    disc = c.strike * np.exp(-r * c.time_to_maturity)
    return d1, d2, disc, sqrt_t


def _bs_prices(sigma, r, c: OptionContract) -> np.ndarray:
    d1, d2, disc, _ = _bs_parts(sigma, r, c)
    call = c.spot * ndtr(d1) - disc * ndtr(d2)
    put = -c.spot * ndtr(-d1) + disc * ndtr(-d2)
    return np.stack([call, put], axis=-1)


def black_scholes_price(x, contract: OptionContract) -> np.ndarray:
    """European call and put prices for state x = [volatility, rate]."""
    x = np.asarray(x, dtype=float)
    sigma, r = x[..., 0], x[..., 1]
    if np.any(sigma <= 0):
        raise DomainError("volatility must be positive")
    return _bs_prices(sigma, r, contract)


def black_scholes_jacobian(x, contract: OptionContract) -> np.ndarray:
    """Closed-form vega and rho for both legs; rows (call, put), cols (sigma, r)."""
    sigma = max(float(x[0]), SIGMA_FLOOR)
    r = float(x[1])
    d1, d2, disc, sqrt_t = _bs_parts(sigma, r, contract)
    vega = contract.spot * np.exp(-0.5 * d1 * d1) / np.sqrt(2 * np.pi) * sqrt_t
    t = contract.time_to_maturity
    rho_call = t * disc * ndtr(d2)
    rho_put = -t * disc * ndtr(-d2)
    return np.array([[vega, rho_call], [vega, rho_put]])


def black_scholes_model(contract: OptionContract, sigma_R: float,
                        jacobian: str = "analytic") -> MeasurementModel:
    """Call/put prices as a measurement of [volatility, rate].

    Proposed volatilities at or below zero are clamped to ``SIGMA_FLOOR`` so
    that sampled filters can still weight them.
    """
    def h(x):
        x = np.asarray(x, dtype=float)
        sigma = x[..., 0]
        if np.any(sigma < SIGMA_FLOOR):
            logger.debug("volatility clamped to %g in %d state(s)", SIGMA_FLOOR,
                         int(np.sum(sigma < SIGMA_FLOOR)))
            sigma = np.maximum(sigma, SIGMA_FLOOR)
        return _bs_prices(sigma, x[..., 1], contract)

    if jacobian == "analytic":
        def jac(x):
            return black_scholes_jacobian(x, contract)
    elif jacobian == "fd":
        def jac(x):
            return fd_jacobian(h, x)
    else:
        raise ValueError(f"unknown jacobian mode {jacobian!r}")
    return MeasurementModel(h=h, jacobian=jac, R=cholesky(sigma_R**2 * np.eye(2)),
                            name="black-scholes")
