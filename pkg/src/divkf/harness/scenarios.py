"""Synthetic data for the radar, sensor-network, options and 1-D smoke scenarios."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .. import models
from ..errors import ConfigError
from ..gaussian import GaussianBelief
from ..models import LinearDynamics, MeasurementModel, OptionContract, SensorLayout
from .config import ExperimentConfig

RADAR_X0 = (1000.0, 10.0, 1000.0, 10.0)
SENSOR_X0 = (1000.0, 1.0, 1000.0, 1.0)
TRACKING_P0 = (100.0, 1.0, 100.0, 1.0)
OPTIONS_P0 = (0.1, 0.1)

# synthetic market: volatility walk, rate walk, spot GBM
VOL0, VOL_STEP, VOL_CLAMP = 0.2, 0.01, (0.05, 0.8)
RATE0, RATE_STEP = 0.03, 0.01
SPOT0 = 100.0
TRADING_DAYS = 252


def stable_key(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def trial_seed(cfg: ExperimentConfig, trial: int) -> np.random.SeedSequence:
    """Seed for one trial, split from the master seed by scenario and index."""
    return np.random.SeedSequence(cfg.seed, spawn_key=(stable_key(cfg.scenario), trial))


@dataclass(frozen=True)
class SweepPoint:
    """Trajectory-side sweep coordinates; unused ones stay None."""

    sigma_cv: float | None = None
    sigma_r: float | None = None
    maturity: float | None = None
    option_index: int | None = None


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    scenario: str
    states: np.ndarray          # (T+1, d) including x_0
    measurements: np.ndarray    # (T, p)
    point: SweepPoint
    seed_key: tuple
    active_ids: np.ndarray | None = None   # (T, k) sensor scenario
    layout: SensorLayout | None = None
    spots: np.ndarray | None = None        # (T,) options scenario
    maturities: np.ndarray | None = None   # (T,)
    strike: float | None = None

    @property
    def horizon(self) -> int:
        return self.measurements.shape[0]

    def __post_init__(self):
        if self.states.shape[0] != self.measurements.shape[0] + 1:
            raise ConfigError("trajectory states and measurements disagree in length")
        if not np.all(np.isfinite(self.measurements)):
            raise ConfigError("non-finite measurement in trajectory")


def true_dynamics(cfg: ExperimentConfig, point: SweepPoint) -> LinearDynamics:
    if cfg.scenario in ("radar", "sensor", "adaptive"):
        return models.cv_dynamics(1.0, point.sigma_cv)
    if cfg.scenario == "smoke":
        return models.random_walk_dynamics(1, point.sigma_cv)
    return models.random_walk_dynamics(2, RATE_STEP)


def filter_dynamics(cfg: ExperimentConfig, point: SweepPoint, sigma_q: float | None) -> LinearDynamics:
    """Transition handed to the filters: true F, with sigma_q^2 I noise unless
    the parameters are known."""
    true = true_dynamics(cfg, point)
    if sigma_q is None:
        return true
    return models.with_isotropic_noise(true, sigma_q)


def measurement_model(cfg: ExperimentConfig, traj: TrajectoryRecord, t: int) -> MeasurementModel:
    """Measurement model in force at step t (0-based over the measurements)."""
    scen = cfg.scenario
    if scen == "radar":
        return models.radar_model(cfg.radar_r_var, cfg.radar_theta_var)
    if scen in ("sensor", "adaptive"):
        return models.sensor_model(traj.layout, traj.active_ids[t], traj.point.sigma_r)
    if scen == "options":
        contract = OptionContract(traj.strike, float(traj.maturities[t]), float(traj.spots[t]))
        return models.black_scholes_model(contract, traj.point.sigma_r, cfg.bs_jacobian)
    return models.linear_model(np.eye(1), np.eye(1) * traj.point.sigma_r**2, name="smoke")


def initial_belief(cfg: ExperimentConfig, traj: TrajectoryRecord) -> GaussianBelief:
    """Filters start at the true x_0 with the configured (or default) spread."""
    if cfg.initial_cov is not None:
        p0 = cfg.initial_cov
    elif cfg.scenario == "options":
        p0 = OPTIONS_P0
    elif cfg.scenario == "smoke":
        p0 = (1.0,)
    else:
        p0 = TRACKING_P0
    if len(p0) != traj.states.shape[1]:
        raise ConfigError("initial_cov has the wrong dimension")
    return GaussianBelief.from_moments(traj.states[0], np.diag(p0))


def _simulate(dyn: LinearDynamics, x0, steps: int, rng, noiseless: bool) -> np.ndarray:
    xs = [np.asarray(x0, dtype=float)]
    for _ in range(steps):
        xs.append(dyn.propagate(xs[-1], None if noiseless else rng))
    return np.array(xs)


def options_horizon(cfg: ExperimentConfig, maturity: float) -> int:
    """Steps until one trading day before expiry, capped at the horizon."""
    return max(1, min(cfg.horizon, math.ceil(maturity * TRADING_DAYS - 1e-9) - 1))


def generate_trajectory(cfg: ExperimentConfig, trial: int, point: SweepPoint,
                        noiseless: bool = False) -> TrajectoryRecord:
    """Simulate one data set. Sweep points of the same trial share random draws."""
    ss = trial_seed(cfg, trial)
    state_ss, layout_ss, noise_ss = ss.spawn(3)
    state_rng = np.random.default_rng(state_ss)
    noise_rng = np.random.default_rng(noise_ss)
    key = (cfg.seed, cfg.scenario, trial)
    T = cfg.horizon
    scen = cfg.scenario

    if scen == "radar":
        states = _simulate(true_dynamics(cfg, point), RADAR_X0, T, state_rng, noiseless)
        model = models.radar_model(cfg.radar_r_var, cfg.radar_theta_var)
        ys = model.h(states[1:])
        if not noiseless:
            ys = ys + noise_rng.standard_normal(ys.shape) @ model.R.factor.T
        ys[:, 1] = models.wrap_angle(ys[:, 1])
        return TrajectoryRecord(scen, states, ys, point, key)

    if scen in ("sensor", "adaptive"):
        states = _simulate(true_dynamics(cfg, point), SENSOR_X0, T, state_rng, noiseless)
        pos = states[:, [0, 2]]
        lo, hi = pos.min(axis=0), pos.max(axis=0)
        half = 0.5 * float(np.max(hi - lo)) + cfg.sensor_margin
        centre = 0.5 * (lo + hi)
        layout = models.uniform_layout(np.random.default_rng(layout_ss), centre - half,
                                       centre + half, cfg.n_sensors, cfg.active_sensors)
        active = np.array([layout.nearest(p) for p in pos[1:]])
        ys = np.array([models.sensor_model(layout, ids, 1.0).h(x)
                       for ids, x in zip(active, states[1:])])
        if not noiseless:
            ys = ys + point.sigma_r * noise_rng.standard_normal(ys.shape)
        return TrajectoryRecord(scen, states, ys, point, key, active_ids=active, layout=layout)

    if scen == "options":
        n = options_horizon(cfg, point.maturity)
        vol = np.empty(n + 1)
        rate = np.empty(n + 1)
        spot = np.empty(n + 1)
        vol[0], rate[0], spot[0] = VOL0, RATE0, SPOT0
        dt = 1.0 / TRADING_DAYS
        for t in range(1, n + 1):
            z = np.zeros(3) if noiseless else state_rng.standard_normal(3)
            vol[t] = np.clip(vol[t - 1] + VOL_STEP * z[0], *VOL_CLAMP)
            rate[t] = rate[t - 1] + RATE_STEP * z[1]
            spot[t] = spot[t - 1] * math.exp(-0.5 * vol[t] ** 2 * dt + vol[t] * math.sqrt(dt) * z[2])
        maturities = point.maturity - np.arange(1, n + 1) / TRADING_DAYS
        states = np.column_stack([vol, rate])
        ys = np.array([models.black_scholes_price(states[t], OptionContract(SPOT0, maturities[t - 1],
                                                                            spot[t]))
                       for t in range(1, n + 1)])
        if not noiseless:
            ys = ys + point.sigma_r * noise_rng.standard_normal(ys.shape)
        return TrajectoryRecord(scen, states, ys, point, key, spots=spot[1:],
                                maturities=maturities, strike=SPOT0)

    if scen == "smoke":
        states = _simulate(true_dynamics(cfg, point), (0.0,), T, state_rng, noiseless)
        ys = states[1:].copy()
        if not noiseless:
            ys = ys + point.sigma_r * noise_rng.standard_normal(ys.shape)
        return TrajectoryRecord(scen, states, ys, point, key)

    raise ConfigError(f"unknown scenario {scen!r}")


def base_estimates(cfg: ExperimentConfig, traj: TrajectoryRecord) -> np.ndarray:
    """Measurement-only reference estimates, one row per step.

    Radar inverts each polar measurement; the sensor network trilaterates from
    the three active ranges; the 1-D smoke model reads y directly. For options
    the rows are predicted prices: yesterday's quote carried forward.
    """
    ys = traj.measurements
    scen = cfg.scenario
    if scen == "radar":
        return models.radar_invert(ys)
    if scen in ("sensor", "adaptive"):
        return np.array([trilaterate(traj.layout.positions[ids], r)
                         for ids, r in zip(traj.active_ids, ys)])
    if scen == "options":
        first = models.black_scholes_price(
            traj.states[0], OptionContract(traj.strike, float(traj.maturities[0]), float(traj.spots[0])))
        return np.vstack([first, ys[:-1]])
    return ys.copy()


def trilaterate(sensors: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    """Position from ranges alone.

    Nonlinear least squares started from the linearized (circle-differencing)
    solution and from the sensor centroid; the better fit wins. The
    linearized solution alone is unstable for nearly collinear sensors.
    """
    s0, r0 = sensors[0], ranges[0]
    A = 2.0 * (sensors[1:] - s0)
    b = (r0**2 - ranges[1:] ** 2) + np.sum(sensors[1:] ** 2, axis=1) - np.sum(s0**2)
    linear, *_ = np.linalg.lstsq(A, b, rcond=None)

    def resid(p):
        return np.linalg.norm(sensors - p, axis=1) - ranges

    best = None
    for start in (linear, sensors.mean(axis=0)):
        if not np.all(np.isfinite(start)):
            continue
        fit = optimize.least_squares(resid, start, method="lm")
        if best is None or fit.cost < best.cost:
            best = fit
    return best.x
