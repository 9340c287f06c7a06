"""Gaussian assumed-density filters, a particle filter and divergence-minimizing
Gaussian filters for nonlinear measurement models."""

from .adf import ekf_update, predict, ukf_update
from .divergence import (
    AdaptivePolicy,
    SkfConfig,
    adaptive_akf_update,
    akf_update,
    confidence_radius,
    min_sample_size,
    mkf_update,
    skf_update,
)
from .errors import (
    ConfigError,
    DegenerateEnsemble,
    DomainError,
    FilterError,
    NotPositiveDefinite,
    SingularPoint,
    WeightCollapse,
)
from .gaussian import GaussianBelief, WeightedEnsemble, cholesky
from .particle import ParticleState, pf_step

__version__ = "0.1.0"

__all__ = [
    "AdaptivePolicy", "ConfigError", "DegenerateEnsemble", "DomainError", "FilterError",
    "GaussianBelief", "NotPositiveDefinite", "ParticleState", "SingularPoint", "SkfConfig",
    "WeightCollapse", "WeightedEnsemble", "adaptive_akf_update", "akf_update", "cholesky",
    "confidence_radius", "ekf_update", "min_sample_size", "mkf_update", "pf_step", "predict",
    "skf_update", "ukf_update",
]
