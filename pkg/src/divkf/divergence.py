"""Gaussian filter updates that minimize a divergence to the exact posterior.

* :func:`skf_update` maximizes the evidence lower bound (forward KL) by
  stochastic natural-gradient ascent, with the EKF linearization as a control
  variate.
* :func:`mkf_update` matches the posterior moments (reverse KL) using
  self-normalized importance sampling.
* :func:`akf_update` matches the moments of the tilted density
  p(x|y)^alpha q(x)^(1-alpha) in one importance-sampling pass.

Plus the sample-size machinery for the two importance-sampling filters:
:func:`confidence_radius` and :func:`min_sample_size`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import adf
from .errors import DegenerateEnsemble, DomainError, NotPositiveDefinite
from .gaussian import (
    GaussianBelief,
    WeightedEnsemble,
    chi2_quantile,
    log_density,
    mvn_sample,
    symmetrize,
    weighted_moments,
)
from .models import MeasurementModel

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# forward KL: stochastic search


@dataclass(frozen=True)
class SkfConfig:
    """Sample size, iteration count and step schedule (offset + i)^-eta."""

    samples: int = 500
    iterations: int = 50
    offset: float = 10.0
    eta: float = 0.8
    control_variate: bool = True
    optimal_lambda: bool = False

    def __post_init__(self):
        if self.samples < 2 or self.iterations < 1:
            raise ValueError("SKF needs samples >= 2 and iterations >= 1")
        if not 0.5 < self.eta <= 1.0 or self.offset < 0:
            raise ValueError("step schedule needs eta in (0.5, 1] and offset >= 0")

    def step_size(self, i: int) -> float:
        return (self.offset + i) ** -self.eta


@dataclass(frozen=True, eq=False)
class ControlVariate:
    """Quadratic surrogate of the log-likelihood from linearizing h at ``anchor``.

    g(x) = -1/2 (r0 - H (x - a))^T R^-1 (r0 - H (x - a)) with r0 = y - h(a),
    which is the same as writing it with y_tilde = y - h(a) + H a.
    """

    anchor: np.ndarray
    H: np.ndarray
    resid0: np.ndarray
    model: MeasurementModel
    y: np.ndarray

    @property
    def y_tilde(self) -> np.ndarray:
        return self.y - np.asarray(self.model.h(self.anchor)) + self.H @ self.anchor

    def f(self, X) -> np.ndarray:
        return -0.5 * self.model.sq_error(self.y, X)

    def g(self, X) -> np.ndarray:
        r = self.resid0 - (np.atleast_2d(X) - self.anchor) @ self.H.T
        z = linalg.solve_triangular(self.model.R.factor, r.T, lower=True)
        out = -0.5 * np.sum(z * z, axis=0)
        return out if np.ndim(X) > 1 else out[0]

    def _RinvH(self) -> np.ndarray:
        return self.model.R.solve(self.H)

    def expectation(self, q: GaussianBelief) -> float:
        """E_q[g] in closed form."""
        r = self.resid0 - self.H @ (q.mean - self.anchor)
        return float(-0.5 * (r @ self.model.R.solve(r)
                             + np.trace(self.H.T @ self._RinvH() @ q.covariance)))

    def grad_mean(self, mu) -> np.ndarray:
        """Gradient of E_q[g] in the mean of q."""
        return self._RinvH().T @ (self.resid0 - self.H @ (np.asarray(mu) - self.anchor))

    def grad_cov(self) -> np.ndarray:
        """Gradient of E_q[g] in the covariance of q."""
        return -0.5 * symmetrize(self.H.T @ self._RinvH())


def control_variate(q_mean, model: MeasurementModel, y) -> ControlVariate:
    q_mean = np.asarray(q_mean, dtype=float)
    y = np.asarray(y, dtype=float)
    H = np.asarray(model.jacobian(q_mean), dtype=float)
    return ControlVariate(q_mean, H, model.residual(y, model.h(q_mean)), model, y)


def elbo_objective(q: GaussianBelief, prior: GaussianBelief, model: MeasurementModel, y,
                   points: int | None = None, width: float = 8.0) -> float:
    """Evidence lower bound E_q[log p(y|x)] + E_q[log p(x)] + H[q] by quadrature.

    The likelihood term is integrated on a tensor grid spanning +/- ``width``
    standard deviations of q (in whitened coordinates); the prior and entropy
    terms are analytic. Only d <= 2 is supported.
    """
    d = q.dim
    if d > 2:
        raise DomainError("quadrature ELBO supports d <= 2 only")
    points = points or (2001 if d == 1 else 401)
    z1 = np.linspace(-width, width, points)
    w1 = np.exp(-0.5 * z1 * z1)
    w1 /= w1.sum()
    if d == 1:
        Z, W = z1[:, None], w1
    else:
        za, zb = np.meshgrid(z1, z1, indexing="ij")
        Z = np.column_stack([za.ravel(), zb.ravel()])
        W = np.outer(w1, w1).ravel()
    X = q.mean + Z @ q.cov.factor.T
    e_loglik = float(W @ model.log_likelihood(y, X))
    diff = q.mean - prior.mean
    e_logprior = -0.5 * (diff @ prior.cov.solve(diff)
                         + np.trace(prior.cov.solve(q.covariance))
                         + d * math.log(2 * math.pi) + prior.cov.logdet())
    entropy = 0.5 * (d * (1.0 + math.log(2 * math.pi)) + q.cov.logdet())
    return e_loglik + float(e_logprior) + entropy


@dataclass(frozen=True, eq=False)
class SkfGradient:
    """Unbiased ELBO gradient estimate plus the per-sample sampled terms."""

    mean: np.ndarray
    cov: np.ndarray
    sampled_mean: np.ndarray
    sampled_cov: np.ndarray
    lam: float


def skf_gradient(q: GaussianBelief, prior: GaussianBelief, model: MeasurementModel, y,
                 samples: int, rng: np.random.Generator, use_control_variate: bool = True,
                 optimal_lambda: bool = False) -> SkfGradient:
    """Score-function estimate of the ELBO gradient in (mean, cov) of q.

    The sampled part averages (f - lam g)(x) grad log q(x); the analytic part
    adds lam grad E_q[g] and the prior and entropy gradients. ``lam`` is 1,
    0 without a control variate, or cov(f, g)/var(g) from the same batch when
    ``optimal_lambda`` is set.
    """
    X = mvn_sample(q, samples, rng)
    cv = control_variate(q.mean, model, y)
    f = cv.f(X)
    if use_control_variate:
        g = cv.g(X)
        if optimal_lambda:
            vg = np.var(g)
            lam = float(np.cov(f, g)[0, 1] / vg) if vg > 0 else 1.0
        else:
            lam = 1.0
    else:
        g, lam = np.zeros_like(f), 0.0
    coef = f - lam * g

    q_prec = q.cov.inverse()
    delta = X - q.mean
    score_mu = delta @ q_prec
    outer = np.einsum("si,sj->sij", score_mu, score_mu)
    score_cov = 0.5 * (outer - q_prec)
    sampled_mean = coef[:, None] * score_mu
    sampled_cov = coef[:, None, None] * score_cov

    grad_mean = sampled_mean.mean(axis=0) + prior.cov.solve(prior.mean - q.mean)
    grad_cov = sampled_cov.mean(axis=0) + 0.5 * (q_prec - prior.cov.inverse())
    if lam != 0.0:
        grad_mean = grad_mean + lam * cv.grad_mean(q.mean)
        grad_cov = grad_cov + lam * cv.grad_cov()
    return SkfGradient(grad_mean, symmetrize(grad_cov), sampled_mean, sampled_cov, lam)


def skf_update(prior: GaussianBelief, model: MeasurementModel, y, cfg: SkfConfig,
               rng: np.random.Generator, info: dict | None = None) -> GaussianBelief:
    """Stochastic search update, started from the EKF posterior.

    Each iteration preconditions with the current covariance (natural
    gradient): mean += rho Sigma grad_mu, Sigma += rho Sigma grad_Sigma Sigma.
    If a covariance step fails factorization the last valid iterate is
    returned and ``info['stopped_early']`` is set.
    """
    info = {} if info is None else info
    q = adf.ekf_update(prior, model, y)
    info["stopped_early"] = False
    info["iterations"] = 0
    for i in range(1, cfg.iterations + 1):
        grad = skf_gradient(q, prior, model, y, cfg.samples, rng,
                            cfg.control_variate, cfg.optimal_lambda)
        rho = cfg.step_size(i)
        S = q.covariance
        mean = q.mean + rho * (S @ grad.mean)
        cov = symmetrize(S + rho * (S @ grad.cov @ S))
        try:
            q = GaussianBelief.from_moments(mean, cov)
        except (NotPositiveDefinite, ValueError):
            logger.debug("SKF covariance step failed at iteration %d; keeping last iterate", i)
            info["stopped_early"] = True
            break
        info["iterations"] = i
    return q


# ---------------------------------------------------------------------------
# reverse KL and alpha-divergence: importance-sampled moment matching


@dataclass(frozen=True, eq=False)
class TiltedWeights:
    alpha: float
    proposal: GaussianBelief
    ensemble: WeightedEnsemble


def tilted_log_weights(prior: GaussianBelief, model: MeasurementModel, y, alpha: float, X,
                       q_init: GaussianBelief | None = None,
                       proposal: GaussianBelief | None = None) -> np.ndarray:
    """log of [p(y|x) p(x)]^alpha q(x)^(1-alpha) / pi(x) at each row of ``X``."""
    proposal = prior if proposal is None else proposal
    log_joint = np.asarray(model.log_likelihood(y, X)) + log_density(prior, X)
    if alpha == 1.0:
        logw = log_joint - log_density(proposal, X)
    else:
        q_init = prior if q_init is None else q_init
        logw = alpha * log_joint + (1.0 - alpha) * log_density(q_init, X) - log_density(proposal, X)
    return np.where(np.isfinite(logw), logw, -np.inf)


def tilted_weights(prior: GaussianBelief, model: MeasurementModel, y, alpha: float,
                   samples: int, rng: np.random.Generator, q_init: GaussianBelief | None = None,
                   proposal: GaussianBelief | None = None) -> TiltedWeights:
    """Draw from the proposal and attach tilted log weights.

    ``q_init`` and ``proposal`` default to the prior.
    """
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    proposal = prior if proposal is None else proposal
    X = mvn_sample(proposal, samples, rng)
    logw = tilted_log_weights(prior, model, y, alpha, X, q_init, proposal)
    return TiltedWeights(alpha, proposal, WeightedEnsemble.from_log_weights(X, logw))


def _moment_match(tw: TiltedWeights, prior: GaussianBelief, info: dict) -> GaussianBelief:
    ens = tw.ensemble
    info["samples"] = ens.size
    info["fallback"] = False
    try:
        info["ess"] = ens.ess()
        return weighted_moments(ens)
    except DegenerateEnsemble as exc:
        logger.debug("moment matching degenerate (%s); keeping the prior", exc)
        info["fallback"] = True
        return prior


def mkf_update(prior: GaussianBelief, model: MeasurementModel, y, samples: int,
               rng: np.random.Generator, proposal: GaussianBelief | None = None,
               info: dict | None = None) -> GaussianBelief:
    """Moment-matching update: self-normalized IS moments of p(x|y).

    Falls back to the prior (``info['fallback']``) when the weighted ensemble
    is degenerate.
    """
    if samples < prior.dim + 1:
        raise ValueError("need at least d + 1 samples")
    info = {} if info is None else info
    tw = tilted_weights(prior, model, y, 1.0, samples, rng, proposal=proposal)
    return _moment_match(tw, prior, info)


def akf_update(prior: GaussianBelief, model: MeasurementModel, y, alpha: float, samples: int,
               rng: np.random.Generator, q_init: GaussianBelief | None = None,
               proposal: GaussianBelief | None = None,
               info: dict | None = None) -> GaussianBelief:
    """One pass of generalized moment matching against the tilted density."""
    if samples < prior.dim + 1:
        raise ValueError("need at least d + 1 samples")
    info = {} if info is None else info
    tw = tilted_weights(prior, model, y, alpha, samples, rng, q_init, proposal)
    return _moment_match(tw, prior, info)


def moment_standard_errors(ens: WeightedEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """Delta-method standard errors of the self-normalized mean and variances."""
    w = ens.weights
    mu = w @ ens.particles
    dev = ens.particles - mu
    var = w @ (dev * dev)
    se_mean = np.sqrt(np.sum((w[:, None] * dev) ** 2, axis=0))
    se_var = np.sqrt(np.sum((w[:, None] * (dev * dev - var)) ** 2, axis=0))
    return se_mean, se_var


# ---------------------------------------------------------------------------
# adaptive sample size


@dataclass(frozen=True)
class AdaptivePolicy:
    s_base: int = 500
    r_max: float = 1.0
    s_floor: int = 100
    s_cap: int = 100_000
    p: float = 0.95

    def __post_init__(self):
        if not self.s_floor <= self.s_base <= self.s_cap:
            raise ValueError("need s_floor <= s_base <= s_cap")
        if self.r_max <= 0:
            raise ValueError("r_max must be positive")


def mean_estimator_cov(ens: WeightedEnsemble) -> np.ndarray:
    """Approximate covariance of the self-normalized mean estimator."""
    w = ens.weights
    dev = ens.particles - w @ ens.particles
    wd = w[:, None] * dev
    return symmetrize(wd.T @ wd)


def confidence_radius(ens: WeightedEnsemble, p: float = 0.95) -> float:
    """Major semi-axis of the p-confidence ellipsoid of the mean estimate."""
    if not np.isfinite(ens.log_total):
        raise DegenerateEnsemble("ensemble has zero total weight")
    lam_max = float(np.linalg.eigvalsh(mean_estimator_cov(ens))[-1])
    return math.sqrt(max(lam_max, 0.0) * chi2_quantile(ens.dim, p))


def min_sample_size(policy: AdaptivePolicy, r_base: float) -> int:
    """Samples needed to shrink the pilot radius ``r_base`` down to ``policy.r_max``."""
    if r_base <= 0:
        raise ValueError("r_base must be positive")
    s = math.ceil(policy.s_base * (r_base / policy.r_max) ** 2 - 1e-9)
    return int(min(max(s, policy.s_floor), policy.s_cap))


def adaptive_akf_update(prior: GaussianBelief, model: MeasurementModel, y, alpha: float,
                        policy: AdaptivePolicy, rng: np.random.Generator,
                        q_init: GaussianBelief | None = None,
                        proposal: GaussianBelief | None = None,
                        info: dict | None = None) -> GaussianBelief:
    """alpha update whose sample size is set from a pilot batch of ``s_base``.

    The pilot's radius fixes S_min; the pilot is kept and topped up with
    S_min - s_base fresh draws when more are needed.
    """
    info = {} if info is None else info
    pilot = tilted_weights(prior, model, y, alpha, policy.s_base, rng, q_init, proposal)
    try:
        r_base = confidence_radius(pilot.ensemble, policy.p)
        s_min = min_sample_size(policy, r_base) if r_base > 0 else policy.s_floor
    except DegenerateEnsemble:
        s_min = policy.s_cap
    info["s_min"] = s_min
    tw = pilot
    if s_min > policy.s_base:
        extra = tilted_weights(prior, model, y, alpha, s_min - policy.s_base, rng, q_init, proposal)
        a, b = pilot.ensemble, extra.ensemble
        merged = WeightedEnsemble.from_log_weights(
            np.vstack([a.particles, b.particles]), np.concatenate([a.log_weights, b.log_weights]))
        tw = TiltedWeights(alpha, pilot.proposal, merged)
    return _moment_match(tw, prior, info)

