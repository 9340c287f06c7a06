"""Dense Gaussian primitives shared by every filter.

Covariances are carried as :class:`SpdMatrix` objects that keep their lower
Cholesky factor next to the matrix, so sampling, densities and solves never
refactorize. Anything assembled from arithmetic goes through
:func:`cholesky`, which symmetrizes and applies a single jitter retry.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats
from scipy.special import logsumexp

from .errors import DegenerateEnsemble, DomainError, NotPositiveDefinite

logger = logging.getLogger(__name__)

_MIN_PIVOT = 1e-12
_JITTER_SCALE = 1e-9
_SYMMETRY_RTOL = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def symmetrize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """Symmetric positive definite matrix with its lower Cholesky factor."""

    matrix: np.ndarray
    factor: np.ndarray
    jittered: bool = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return linalg.cho_solve((self.factor, True), b)

    def inverse(self) -> np.ndarray:
        return symmetrize(self.solve(np.eye(self.dim)))

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.factor))))


def _try_cholesky(m: np.ndarray) -> np.ndarray | None:
    try:
        factor = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(factor)) or np.min(np.diag(factor)) <= _MIN_PIVOT:
        return None
    return factor


def cholesky(m) -> SpdMatrix:
    """Factor ``m`` as L L^T after symmetrization.

    On failure the diagonal is loaded once with ``1e-9 * trace(m) / d`` and the
    factorization retried; a second failure raises :class:`NotPositiveDefinite`.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = max(np.max(np.abs(m)), np.finfo(float).tiny)
    if np.max(np.abs(m - m.T)) > _SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric")
    m = symmetrize(m)
    factor = _try_cholesky(m)
    if factor is not None:
        return SpdMatrix(_frozen(m), _frozen(factor))
    d = m.shape[0]
    jitter = _JITTER_SCALE * np.trace(m) / d
    if jitter > 0:
        m_j = m + jitter * np.eye(d)
        factor = _try_cholesky(m_j)
        if factor is not None:
            logger.debug("cholesky succeeded after jitter %.3g", jitter)
            return SpdMatrix(_frozen(m_j), _frozen(factor), jittered=True)
    raise NotPositiveDefinite(f"matrix is not positive definite (trace={np.trace(m):.3g})")


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    cov: SpdMatrix

    @classmethod
    def from_moments(cls, mean, cov) -> GaussianBelief:
        mean = _frozen(np.atleast_1d(mean))
        spd = cov if isinstance(cov, SpdMatrix) else cholesky(cov)
        if spd.dim != mean.shape[0]:
            raise ValueError(f"mean has dim {mean.shape[0]} but cov has dim {spd.dim}")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean has non-finite entries")
        return cls(mean, spd)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        return self.cov.matrix

    def mahalanobis(self, x) -> float:
        """Mahalanobis distance of ``x`` from the mean under this covariance."""
        z = linalg.solve_triangular(self.cov.factor, np.asarray(x, float) - self.mean, lower=True)
        return float(np.sqrt(z @ z))


def mvn_sample(belief: GaussianBelief, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` rows ``mean + L z``; returns shape (count, d)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    z = rng.standard_normal((count, belief.dim))
    return belief.mean + z @ belief.cov.factor.T


def log_density(belief: GaussianBelief, x) -> float | np.ndarray:
    """Gaussian log-density at a point (d,) or at each row of an (n, d) array."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    diff = np.atleast_2d(x) - belief.mean
    if diff.shape[1] != belief.dim:
        raise ValueError(f"point dim {diff.shape[1]} != belief dim {belief.dim}")
    z = linalg.solve_triangular(belief.cov.factor, diff.T, lower=True)
    out = -0.5 * np.sum(z * z, axis=0) - 0.5 * (belief.dim * _LOG_2PI + belief.cov.logdet())
    return float(out[0]) if single else out


@dataclass(frozen=True, eq=False)
class WeightedEnsemble:
    """Particles with importance weights, stored in log space.

    ``log_weights`` are unnormalized; ``weights`` are normalized to sum to one.
    """

    particles: np.ndarray
    log_weights: np.ndarray

    @classmethod
    def from_log_weights(cls, particles, log_weights) -> WeightedEnsemble:
        particles = np.atleast_2d(np.asarray(particles, dtype=float))
        log_weights = np.asarray(log_weights, dtype=float).reshape(-1)
        if particles.shape[0] != log_weights.shape[0]:
            raise ValueError("particles and weights disagree in length")
        if np.any(np.isnan(log_weights)) or np.any(log_weights == np.inf):
            raise ValueError("log weights must be finite or -inf")
        return cls(_frozen(particles), _frozen(log_weights))

    @classmethod
    def from_weights(cls, particles, weights) -> WeightedEnsemble:
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0):
            raise ValueError("weights must be nonnegative")
        with np.errstate(divide="ignore"):
            return cls.from_log_weights(particles, np.log(weights))

    @classmethod
    def uniform(cls, particles) -> WeightedEnsemble:
        particles = np.atleast_2d(particles)
        return cls.from_log_weights(particles, np.zeros(particles.shape[0]))

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    @property
    def log_total(self) -> float:
        return float(logsumexp(self.log_weights))

    @property
    def total(self) -> float:
        return float(np.exp(self.log_total))

    @property
    def weights(self) -> np.ndarray:
        lt = self.log_total
        if not np.isfinite(lt):
            raise DegenerateEnsemble("ensemble has zero total weight")
        return np.exp(self.log_weights - lt)

    def ess(self) -> float:
        w = self.weights
        return float(1.0 / np.sum(w * w))

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles


def weighted_moments(ens: WeightedEnsemble) -> GaussianBelief:
    """Self-normalized mean and covariance of the ensemble as a Gaussian."""
    w = ens.weights
    mu = w @ ens.particles
    diff = ens.particles - mu
    cov = symmetrize((diff * w[:, None]).T @ diff)
    try:
        return GaussianBelief.from_moments(mu, cov)
    except NotPositiveDefinite as exc:
        raise DegenerateEnsemble(f"ensemble covariance is singular (ess={ens.ess():.3g})") from exc


@functools.lru_cache(maxsize=256)
def chi2_quantile(d: int, p: float) -> float:
    """Quantile of the chi-squared distribution with ``d`` degrees of freedom."""
    if d < 1:
        raise DomainError("degrees of freedom must be >= 1")
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    return float(stats.chi2.ppf(p, d))
