"""Sequential importance resampling particle filter."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEnsemble
from .gaussian import GaussianBelief, WeightedEnsemble, mvn_sample, weighted_moments
from .models import LinearDynamics, MeasurementModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ParticleState:
    """Uniformly weighted prior particles for the next measurement."""

    ensemble: WeightedEnsemble
    step_count: int = 0
    collapsed: bool = False
    last_ess: float | None = None

    @classmethod
    def from_belief(cls, belief: GaussianBelief, count: int, rng: np.random.Generator,
                    dyn: LinearDynamics | None = None) -> ParticleState:
        """Sample ``count`` particles from ``belief``, optionally pushed through ``dyn``."""
        x = mvn_sample(belief, count, rng)
        if dyn is not None:
            x = dyn.propagate(x, rng)
        return cls(WeightedEnsemble.uniform(x))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Ancestor indices from one uniform offset and an evenly spaced comb."""
    n = weights.shape[0]
    positions = (rng.uniform() + np.arange(n)) / n
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right").clip(max=n - 1)


def pf_step(state: ParticleState, dyn: LinearDynamics, model: MeasurementModel, y,
            rng: np.random.Generator) -> tuple[ParticleState, GaussianBelief]:
    """Weight by the likelihood of ``y``, summarize, resample, propagate.

    Returns the prior particles for the next step and the Gaussian summary of
    the weighted posterior ensemble. If every likelihood underflows the step
    falls back to uniform weights and the returned state is flagged.
    """
    x = state.ensemble.particles
    if x.shape[0] == 0:
        raise ValueError("empty particle ensemble")
    with np.errstate(over="ignore", invalid="ignore"):
        loglik = np.asarray(model.log_likelihood(y, x), dtype=float)
    collapsed = not np.any(np.isfinite(loglik))
    if collapsed:
        logger.warning("particle weights collapsed at step %d; using uniform weights",
                       state.step_count)
        loglik = np.zeros_like(loglik)
    loglik = np.where(np.isfinite(loglik), loglik, -np.inf)
    ens = WeightedEnsemble.from_log_weights(x, loglik - np.max(loglik))
    try:
        summary = weighted_moments(ens)
    except DegenerateEnsemble:
        summary = GaussianBelief.from_moments(ens.mean(), _spread(x))
    ancestors = systematic_resample(ens.weights, rng)
    new_x = dyn.propagate(x[ancestors], rng)
    new_state = ParticleState(WeightedEnsemble.uniform(new_x), state.step_count + 1,
                              collapsed, ens.ess())
    return new_state, summary


def _spread(x: np.ndarray) -> np.ndarray:
    # fallback covariance when the weighted one is singular
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    return cov + 1e-9 * max(np.trace(cov), 1.0) * np.eye(x.shape[1])
