"""Experiment configuration and its JSON form."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError

SCHEMA_VERSION = 1
SCENARIOS = ("radar", "sensor", "options", "smoke", "adaptive")
FILTERS = ("EKF", "UKF", "PF", "SKF", "MKF", "AKF")

# sweep axes as they appear in the tables
TABLE_SIGMA_Q = [1e-2, 5e-2, 1e-1, 5e-1, 1.0]
RADAR_SIGMA_CV = [1e-3 * k for k in range(1, 11)]
KNOWN_SIGMA_CV = [0.001, 0.005, 0.01, 0.05, 0.1]
KNOWN_SIGMA_R = [10.0, 15.0, 20.0, 25.0, 30.0]


@dataclass
class ExperimentConfig:
    """Everything one sweep needs. Lists are sweep axes."""

    scenario: str
    schema_version: int = SCHEMA_VERSION
    seed: int = 20170601
    trials: int = 5
    horizon: int = 100
    filters: list[str] = field(default_factory=lambda: list(FILTERS))
    # filter-side process noise sigma_Q^2 I; ignored when known_parameters is set
    sigma_q: list[float] = field(default_factory=lambda: [1e-1])
    known_parameters: bool = False
    sigma_cv: list[float] = field(default_factory=lambda: [1e-2])
    # sensor range noise std, or option price noise std
    sigma_r: list[float] = field(default_factory=lambda: [20.0])
    radar_r_var: float = 0.1
    radar_theta_var: float = 0.01
    alphas: list[float] = field(default_factory=lambda: [0.5])
    pf_particles: int = 10_000
    mkf_particles: int = 10_000
    akf_particles: int = 10_000
    skf_samples: int = 500
    skf_iterations: int = 50
    skf_offset: float = 10.0
    skf_eta: float = 0.8
    skf_control_variate: bool = True
    ukf_lambda: float | None = None
    initial_cov: list[float] | None = None
    r_max: list[float] = field(default_factory=list)
    s_base: int = 500
    s_floor: int = 100
    s_cap: int = 100_000
    confidence: float = 0.95
    n_sensors: int = 200
    active_sensors: int = 3
    sensor_margin: float = 50.0
    maturities: list[float] = field(default_factory=lambda: [1 / 6, 0.5, 1.0])
    bs_jacobian: str = "analytic"
    workers: int = 1

    def validate(self) -> ExperimentConfig:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.trials < 1 or self.horizon < 1:
            raise ConfigError("trials and horizon must be >= 1")
        bad = [f for f in self.filters if f not in FILTERS]
        if bad or not self.filters:
            raise ConfigError(f"unknown or empty filter list: {bad or self.filters}")
        for name in sweep_axes(self):
            values = getattr(self, name)
            if not values:
                raise ConfigError(f"sweep axis {name} is empty")
            if any(not isinstance(v, (int, float)) or v <= 0 for v in values):
                raise ConfigError(f"sweep axis {name} needs positive numbers")
        if any(a > 1 for a in self.alphas):
            raise ConfigError("alpha must lie in (0, 1]")
        budgets = (self.pf_particles, self.mkf_particles, self.akf_particles,
                   self.skf_samples, self.skf_iterations, self.s_base)
        if min(budgets) < 1:
            raise ConfigError("particle budgets must be positive")
        if not self.s_floor <= self.s_base <= self.s_cap:
            raise ConfigError("need s_floor <= s_base <= s_cap")
        if self.active_sensors > self.n_sensors:
            raise ConfigError("more active sensors than sensors")
        if self.bs_jacobian not in ("analytic", "fd"):
            raise ConfigError("bs_jacobian must be 'analytic' or 'fd'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def sweep_axes(cfg: ExperimentConfig) -> tuple[str, ...]:
    """Config list fields that act as sweep axes for this scenario."""
    axes = {
        "radar": ("sigma_q", "sigma_cv", "alphas"),
        "sensor": ("sigma_q", "sigma_cv", "sigma_r", "alphas"),
        "options": ("sigma_q", "sigma_r", "alphas", "maturities"),
        "smoke": ("sigma_q", "sigma_cv", "sigma_r", "alphas"),
        "adaptive": ("sigma_q", "sigma_cv", "sigma_r", "alphas", "r_max"),
    }[cfg.scenario]
    if cfg.known_parameters:
        axes = tuple(a for a in axes if a != "sigma_q")
    return axes


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def default_config(scenario: str, desk_scale: bool = True) -> ExperimentConfig:
    """Sweep defaults per scenario; ``desk_scale`` trims trials and axes."""
    trials = 5 if desk_scale else 20
    if scenario == "radar":
        cfg = ExperimentConfig(scenario, trials=trials, sigma_q=list(TABLE_SIGMA_Q),
                               sigma_cv=[1e-3, 1e-2] if desk_scale else list(RADAR_SIGMA_CV))
    elif scenario == "sensor":
        cfg = ExperimentConfig(scenario, trials=trials,
                               sigma_q=[1e-2, 1e-1, 1.0] if desk_scale else list(TABLE_SIGMA_Q))
    elif scenario == "options":
        cfg = ExperimentConfig(scenario, trials=trials, filters=["EKF", "UKF", "SKF", "MKF"],
                               sigma_q=[1e-2], sigma_r=[1e-2],
                               mkf_particles=1000, pf_particles=1000, akf_particles=1000,
                               skf_samples=1000, skf_iterations=100, alphas=[1.0])
    elif scenario == "smoke":
        cfg = ExperimentConfig(scenario, trials=trials, sigma_q=[1.0], known_parameters=True,
                               sigma_cv=[0.5], sigma_r=[1.0], alphas=[1.0])
    elif scenario == "adaptive":
        cfg = ExperimentConfig(scenario, trials=trials, filters=["AKF", "PF"],
                               known_parameters=True, sigma_cv=[0.1],
                               r_max=[0.5, 1.0, 1.5, 2.0])
    else:
        raise ConfigError(f"unknown scenario {scenario!r}")
    return cfg.validate()


def config_from_dict(data: dict, scenario: str | None = None,
                     desk_scale: bool = True) -> ExperimentConfig:
    """Overlay ``data`` on the scenario defaults; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - _FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    if "schema_version" not in data:
        raise ConfigError("config is missing schema_version")
    scen = data.get("scenario", scenario)
    if scenario is not None and scen != scenario:
        raise ConfigError(f"config is for scenario {scen!r}, not {scenario!r}")
    cfg = default_config(scen, desk_scale)
    for key, value in data.items():
        setattr(cfg, key, value)
    return cfg.validate()


def load_config(path, scenario: str | None = None, desk_scale: bool = True) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data, scenario, desk_scale)
