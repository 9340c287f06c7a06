"""Filter sessions, per-trial runs and sweep aggregation."""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import adf, divergence
from ..errors import FilterError
from ..gaussian import GaussianBelief
from ..models import LinearDynamics, MeasurementModel
from ..particle import ParticleState, pf_step
from . import scenarios
from .config import FILTERS, ExperimentConfig
from .scenarios import SweepPoint, TrajectoryRecord

logger = logging.getLogger(__name__)

BASE = "BASE"
DIVERGENCE_FACTOR = 100.0
ROW_ORDER = (BASE,) + FILTERS
COORDS = ("sigma_q", "sigma_cv", "sigma_r", "alpha", "r_max")
STEP_ERRORS = (FilterError, ValueError, ArithmeticError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class FilterSpec:
    """One filter configuration inside a sweep."""

    name: str
    sigma_q: float | None = None
    alpha: float | None = None
    r_max: float | None = None
    particles: int | None = None

    def __post_init__(self):
        if self.name not in FILTERS:
            raise ValueError(f"unknown filter {self.name!r}")
        if self.name == "AKF" and self.alpha is None:
            raise ValueError("AKF needs alpha")


# ---------------------------------------------------------------------------
# sessions: one filter walking one trajectory


class GaussianSession:
    """Predict with the linear dynamics, then apply ``update``."""

    def __init__(self, belief: GaussianBelief, dyn: LinearDynamics, update):
        self.posterior = belief
        self.dyn = dyn
        self.update = update
        self.infos: list[dict] = []

    @property
    def estimate(self) -> np.ndarray:
        return self.posterior.mean

    def step(self, model: MeasurementModel, y) -> np.ndarray:
        prior = adf.predict(self.posterior, self.dyn)
        info: dict = {}
        self.posterior = self.update(prior, model, y, info)
        self.infos.append(info)
        return self.posterior.mean


class ParticleSession:
    def __init__(self, belief: GaussianBelief, dyn: LinearDynamics, count: int,
                 rng: np.random.Generator):
        self.state = ParticleState.from_belief(belief, count, rng, dyn)
        self.dyn = dyn
        self.rng = rng
        self.posterior = belief
        self.infos: list[dict] = []

    @property
    def estimate(self) -> np.ndarray:
        return self.posterior.mean

    def step(self, model: MeasurementModel, y) -> np.ndarray:
        self.state, self.posterior = pf_step(self.state, self.dyn, model, y, self.rng)
        self.infos.append({"ess": self.state.last_ess, "collapsed": self.state.collapsed})
        return self.posterior.mean


def open_session(spec: FilterSpec, belief: GaussianBelief, dyn: LinearDynamics,
                 cfg: ExperimentConfig, rng: np.random.Generator):
    """Build the session for ``spec`` starting from posterior ``belief``."""
    name = spec.name
    if name == "PF":
        return ParticleSession(belief, dyn, spec.particles or cfg.pf_particles, rng)
    if name == "EKF":
        def update(prior, model, y, info):
            return adf.ekf_update(prior, model, y)
    elif name == "UKF":
        def update(prior, model, y, info):
            return adf.ukf_update(prior, model, y, cfg.ukf_lambda)
    elif name == "SKF":
        skf = divergence.SkfConfig(cfg.skf_samples, cfg.skf_iterations, cfg.skf_offset,
                                   cfg.skf_eta, cfg.skf_control_variate)

        def update(prior, model, y, info):
            return divergence.skf_update(prior, model, y, skf, rng, info)
    elif name == "MKF":
        def update(prior, model, y, info):
            return divergence.mkf_update(prior, model, y, cfg.mkf_particles, rng, info=info)
    elif spec.r_max is not None:
        policy = divergence.AdaptivePolicy(cfg.s_base, spec.r_max, cfg.s_floor, cfg.s_cap,
                                           cfg.confidence)

        def update(prior, model, y, info):
            return divergence.adaptive_akf_update(prior, model, y, spec.alpha, policy, rng,
                                                  info=info)
    else:
        def update(prior, model, y, info):
            return divergence.akf_update(prior, model, y, spec.alpha, cfg.akf_particles, rng,
                                         info=info)
    return GaussianSession(belief, dyn, update)


# ---------------------------------------------------------------------------
# single run


@dataclass(frozen=True, eq=False)
class FilterRun:
    """Output of one filter over one trajectory.

    ``estimates`` holds the posterior means x_{t|t}; ``predictions`` the
    one-step-ahead measurement predictions h_t(F x_{t-1|t-1}).
    """

    spec: FilterSpec
    estimates: np.ndarray
    predictions: np.ndarray
    runtime_ms: float
    error: str | None = None
    infos: list = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return self.error is not None

    def mean_info(self, key: str) -> float:
        vals = [i[key] for i in self.infos if key in i]
        return float(np.mean(vals)) if vals else math.nan


def filter_rng(cfg: ExperimentConfig, trial: int, label: str) -> np.random.Generator:
    """Filter randomness for one trial. Independent of sigma_q so the sigma_q
    columns share random numbers."""
    key = (scenarios.stable_key(cfg.scenario), trial, scenarios.stable_key("filter:" + label))
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=key))


def _label(spec: FilterSpec) -> str:
    parts = [spec.name]
    if spec.alpha is not None:
        parts.append(f"a={spec.alpha:g}")
    if spec.r_max is not None:
        parts.append(f"r={spec.r_max:g}")
    return ",".join(parts)


def run_filter(spec: FilterSpec, traj: TrajectoryRecord, cfg: ExperimentConfig,
               rng: np.random.Generator | None = None) -> FilterRun:
    """Run one filter over ``traj``. Step failures end the run with ``error`` set."""
    trial = traj.seed_key[2]
    rng = rng if rng is not None else filter_rng(cfg, trial, _label(spec))
    dyn = scenarios.filter_dynamics(cfg, traj.point,
                                    None if cfg.known_parameters else spec.sigma_q)
    belief = scenarios.initial_belief(cfg, traj)
    T = traj.horizon
    est = np.full((T, belief.dim), np.nan)
    pred = np.full(traj.measurements.shape, np.nan)
    start = time.perf_counter()
    error = None
    session = None
    try:
        session = open_session(spec, belief, dyn, cfg, rng)
        for t in range(T):
            model = scenarios.measurement_model(cfg, traj, t)
            pred[t] = model.h(dyn.F @ session.estimate)
            est[t] = session.step(model, traj.measurements[t])
            if not np.all(np.isfinite(est[t])):
                raise FloatingPointError(f"non-finite estimate at step {t}")
    except STEP_ERRORS as exc:
        error = f"{type(exc).__name__}: {exc}"
        logger.info("%s failed on trial %d: %s", _label(spec), trial, error)
    runtime = 1e3 * (time.perf_counter() - start)
    infos = session.infos if session is not None else []
    return FilterRun(spec, est, pred, runtime, error, infos)


# ---------------------------------------------------------------------------
# metrics


def position_mse(estimates: np.ndarray, states: np.ndarray) -> float:
    """Mean over steps of the squared error in the two position components."""
    err = estimates[:, [0, 2]] - states[1:, [0, 2]]
    return float(np.mean(np.sum(err**2, axis=1)))


def state_mse(estimates: np.ndarray, states: np.ndarray) -> float:
    return float(np.mean(np.sum((estimates - states[1:]) ** 2, axis=1)))


def true_prices(cfg: ExperimentConfig, traj: TrajectoryRecord) -> np.ndarray:
    return np.array([scenarios.measurement_model(cfg, traj, t).h(traj.states[t + 1])
                     for t in range(traj.horizon)])


def _metrics_for(cfg: ExperimentConfig, traj: TrajectoryRecord, estimates, predictions,
                 truth=None) -> dict[str, float]:
    scen = cfg.scenario
    if scen == "options":
        truth = true_prices(cfg, traj) if truth is None else truth
        k = traj.point.option_index + 1
        mae = np.mean(np.abs(predictions - truth), axis=0)
        return {f"mae_call_opt{k}": float(mae[0]), f"mae_put_opt{k}": float(mae[1])}
    if scen == "smoke":
        return {"mse_state": state_mse(estimates, traj.states)}
    return {"mse_position": position_mse(estimates, traj.states)}


def base_metrics(cfg: ExperimentConfig, traj: TrajectoryRecord, truth=None) -> dict[str, float]:
    """Metrics of the measurement-only estimator."""
    base = scenarios.base_estimates(cfg, traj)
    if cfg.scenario == "options":
        return _metrics_for(cfg, traj, None, base, truth)
    if cfg.scenario == "smoke":
        return {"mse_state": state_mse(base, traj.states)}
    err = base - traj.states[1:, [0, 2]]
    return {"mse_position": float(np.mean(np.sum(err**2, axis=1)))}


def is_diverged(metrics: dict[str, float], base: dict[str, float]) -> bool:
    """Non-finite, or worse than the measurement-only estimate by 100x."""
    for key, value in metrics.items():
        if not math.isfinite(value):
            return True
        if key in base and value > DIVERGENCE_FACTOR * base[key]:
            return True
    return False


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class TrialRecord:
    """One (filter, sweep point, trial) outcome before aggregation."""

    filter: str
    coords: tuple  # in COORDS order
    metrics: tuple  # ((name, value), ...)
    diverged: bool
    runtime_ms: float
    trial: int
    error: str | None = None


@dataclass(frozen=True)
class PredictionRecord:
    filter: str
    coords: tuple
    trial: int
    option: int
    spots: np.ndarray
    maturities: np.ndarray
    strike: float
    rates: np.ndarray
    calls: np.ndarray
    puts: np.ndarray


@dataclass
class ResultRow:
    scenario: str
    filter: str
    sigma_q: float | None
    sigma_cv: float | None
    sigma_r: float | None
    alpha: float | None
    r_max: float | None
    metric: str
    value: float | None
    stderr: float | None
    trials: int
    runtime_ms: float
    diverged: bool = False

    def __post_init__(self):
        if not self.diverged and (self.value is None or not math.isfinite(self.value)):
            raise ValueError("value must be finite unless the row is marked diverged")

    def sort_key(self):
        coords = tuple(-math.inf if v is None else v for v in (
            self.sigma_q, self.sigma_cv, self.sigma_r, self.alpha, self.r_max))
        return (coords[1:3], ROW_ORDER.index(self.filter), coords[0], coords[3:], self.metric)


def trajectory_points(cfg: ExperimentConfig) -> list[SweepPoint]:
    scen = cfg.scenario
    if scen == "options":
        return [SweepPoint(sigma_r=r, maturity=m, option_index=k)
                for r in cfg.sigma_r for k, m in enumerate(cfg.maturities)]
    if scen == "radar":
        return [SweepPoint(sigma_cv=c) for c in cfg.sigma_cv]
    return [SweepPoint(sigma_cv=c, sigma_r=r) for c in cfg.sigma_cv for r in cfg.sigma_r]


def filter_specs(cfg: ExperimentConfig) -> list[FilterSpec]:
    """Filter variants run on every trajectory; PF in the adaptive scenario
    is sized from the AKF runs and added later."""
    qs = [None] if cfg.known_parameters else list(cfg.sigma_q)
    specs = []
    for q in qs:
        for name in cfg.filters:
            if name == "AKF":
                rmaxes = cfg.r_max if cfg.scenario == "adaptive" else [None]
                specs += [FilterSpec(name, q, a, r) for a in cfg.alphas for r in rmaxes]
            elif not (name == "PF" and cfg.scenario == "adaptive"):
                specs.append(FilterSpec(name, q))
    return specs


def _coords(spec: FilterSpec | None, point: SweepPoint, cfg: ExperimentConfig) -> tuple:
    sigma_cv = None if cfg.scenario == "options" else point.sigma_cv
    sigma_r = None if cfg.scenario == "radar" else point.sigma_r
    if spec is None:
        return (None, sigma_cv, sigma_r, None, None)
    return (spec.sigma_q, sigma_cv, sigma_r, spec.alpha, spec.r_max)


def run_trial(cfg: ExperimentConfig, trial: int, point: SweepPoint):
    """All filters on one trajectory. Returns (TrialRecords, PredictionRecords)."""
    traj = scenarios.generate_trajectory(cfg, trial, point)
    truth = true_prices(cfg, traj) if cfg.scenario == "options" else None
    base = base_metrics(cfg, traj, truth)
    records = [TrialRecord(BASE, _coords(None, point, cfg), tuple(base.items()),
                           False, 0.0, trial)]
    predictions = []

    def record(spec: FilterSpec, run: FilterRun, extra=()):
        coords = _coords(spec, point, cfg)
        if run.failed:
            metrics = {k: math.nan for k in base}
        else:
            metrics = _metrics_for(cfg, traj, run.estimates, run.predictions, truth)
        metrics.update(extra)
        records.append(TrialRecord(spec.name, coords, tuple(metrics.items()),
                                    run.failed or is_diverged(metrics, base),
                                    run.runtime_ms, trial, run.error))
        if cfg.scenario == "options" and not run.failed:
            rates = np.vstack([scenarios.initial_belief(cfg, traj).mean,
                               run.estimates[:-1]])[:, 1]
            predictions.append(PredictionRecord(
                spec.name, coords, trial, point.option_index + 1, traj.spots,
                traj.maturities, traj.strike, rates, run.predictions[:, 0], run.predictions[:, 1]))

    s_min_by_rmax: dict = {}
    for spec in filter_specs(cfg):
        run = run_filter(spec, traj, cfg)
        extra = ()
        if spec.r_max is not None:
            s_min = run.mean_info("s_min")
            extra = (("s_min_mean", s_min),)
            if spec.alpha == cfg.alphas[0]:
                s_min_by_rmax[(spec.sigma_q, spec.r_max)] = s_min
        record(spec, run, extra)
    if cfg.scenario == "adaptive" and "PF" in cfg.filters:
        for (q, r), s_min in s_min_by_rmax.items():
            n = cfg.pf_particles if not math.isfinite(s_min) else max(2, math.ceil(s_min))
            spec = FilterSpec("PF", q, None, r, n)
            record(spec, run_filter(spec, traj, cfg))
    return records, predictions


def _run_task(args):
    cfg, trial, point = args
    return run_trial(cfg, trial, point)


def aggregate(cfg: ExperimentConfig, records: list[TrialRecord]) -> list[ResultRow]:
    """Mean and standard error across trials for every (filter, coords, metric)."""
    groups: dict = {}
    for rec in records:
        for metric, value in rec.metrics:
            groups.setdefault((rec.filter, rec.coords, metric), []).append(
                (value, rec.diverged, rec.runtime_ms))
    rows = []
    for (name, coords, metric), entries in groups.items():
        values = np.array([e[0] for e in entries], dtype=float)
        diverged = any(e[1] for e in entries) and metric != "s_min_mean"
        n = len(entries)
        runtime = float(np.mean([e[2] for e in entries]))
        if diverged or not np.all(np.isfinite(values)):
            value = stderr = None
            diverged = True
        else:
            value = float(np.mean(values))
            stderr = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        rows.append(ResultRow(cfg.scenario, name, *coords, metric, value, stderr, n,
                              runtime, diverged))
    rows.sort(key=ResultRow.sort_key)
    return rows


@dataclass
class SweepResult:
    rows: list[ResultRow]
    records: list[TrialRecord]
    predictions: list[PredictionRecord]
    interrupted: bool = False


def run_sweep(cfg: ExperimentConfig, workers: int | None = None) -> SweepResult:
    """Every trajectory sweep point times every trial, aggregated.

    On KeyboardInterrupt the finished tasks are aggregated and returned with
    ``interrupted`` set.
    """
    cfg.validate()
    workers = workers or cfg.workers
    tasks = [(cfg, k, p) for p, k in itertools.product(trajectory_points(cfg),
                                                         range(cfg.trials))]
    records: list[TrialRecord] = []
    predictions: list[PredictionRecord] = []
    interrupted = False
    try:
        if workers == 1:
            results = map(_run_task, tasks)
            for recs, preds in results:
                records += recs
                predictions += preds
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for recs, preds in pool.map(_run_task, tasks):
                    records += recs
                    predictions += preds
    except KeyboardInterrupt:
        logger.warning("interrupted after %d trial records; keeping partial results",
                       len(records))
        interrupted = True
    rows = aggregate(cfg, records) if records else []
    return SweepResult(rows, records, predictions, interrupted)


def parity_gap(pred: PredictionRecord) -> float:
    """Largest |C - P - (S - X exp(-r t))| over the predicted prices."""
    rhs = pred.spots - pred.strike * np.exp(-pred.rates * pred.maturities)
    return float(np.max(np.abs(pred.calls - pred.puts - rhs)))


__all__ = [
    "BASE", "FilterSpec", "FilterRun", "ResultRow", "SweepResult", "TrialRecord",
    "aggregate", "base_metrics", "filter_specs", "is_diverged", "open_session",
    "parity_gap", "position_mse", "run_filter", "run_sweep", "run_trial",
    "trajectory_points",
]
