"""Brute-force references for the test suite.

Nothing in here is used by the filters. The code deliberately avoids the
production helpers (no Cholesky-cached beliefs, no shared update code) so that
agreement between the two routes means something.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError
from .gaussian import GaussianBelief


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid of ``points`` nodes per axis over center +/- width * scale."""

    center: tuple[float, ...]
    scale: tuple[float, ...]
    width: float = 8.0
    points: int = 2001

    def __post_init__(self):
        if self.points < 201:
            raise ValueError("grid needs at least 201 points per axis")
        if len(self.center) != len(self.scale):
            raise ValueError("center and scale disagree in dimension")
        if not all(np.isfinite(self.center)) or not all(np.isfinite(self.scale)):
            raise ValueError("grid bounds must be finite")

    @classmethod
    def around(cls, belief: GaussianBelief, width: float = 8.0, points: int | None = None):
        d = belief.dim
        points = points or (2001 if d == 1 else 401)
        return cls(tuple(belief.mean.tolist()),
                   tuple(np.sqrt(np.diag(belief.covariance)).tolist()), width, points)

    def nodes(self) -> tuple[np.ndarray, float]:
        axes = [np.linspace(c - self.width * s, c + self.width * s, self.points)
                for c, s in zip(self.center, self.scale)]
        cell = float(np.prod([a[1] - a[0] for a in axes]))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh]), cell


def _gauss_logpdf(mean, cov, X) -> np.ndarray:
    # plain inverse/determinant, independent of the Cholesky path
    cov = np.atleast_2d(cov)
    diff = np.atleast_2d(X) - mean
    inv = np.linalg.inv(cov)
    quad = np.einsum("ni,ij,nj->n", diff, inv, diff)
    _, logdet = np.linalg.slogdet(2 * np.pi * cov)
    return -0.5 * quad - 0.5 * logdet


def grid_posterior_moments(prior: GaussianBelief, model, y, grid: GridSpec | None = None,
                           alpha: float | None = None,
                           tilt_q: GaussianBelief | None = None) -> GaussianBelief:
    """Mean and covariance of p(y|x)^a p(x)^a q(x)^(1-a) by Riemann sums.

    With ``alpha`` unset this is the exact posterior. ``tilt_q`` defaults to
    the prior.
    """
    if prior.dim > 2:
        raise DomainError("grid oracle supports d <= 2 only")
    grid = grid or GridSpec.around(prior)
    X, _ = grid.nodes()
    r = np.atleast_2d(np.asarray(y, float) - model.h(X).reshape(X.shape[0], -1))
    Rinv = np.linalg.inv(model.R.matrix)
    loglik = -0.5 * np.einsum("ni,ij,nj->n", r, Rinv, r)
    logp = _gauss_logpdf(prior.mean, prior.covariance, X)
    if alpha is None:
        logt = loglik + logp
    else:
        q = prior if tilt_q is None else tilt_q
        logt = alpha * (loglik + logp) + (1 - alpha) * _gauss_logpdf(q.mean, q.covariance, X)
    w = np.exp(logt - logsumexp(logt))
    mu = w @ X
    dev = X - mu
    return GaussianBelief.from_moments(mu, (dev * w[:, None]).T @ dev)


@dataclass(frozen=True, eq=False)
class FdGradient:
    mean: np.ndarray
    cov: np.ndarray


def fd_gradient(fn: Callable[[GaussianBelief], float], at: GaussianBelief,
                step: float = 1e-5) -> FdGradient:
    """Central differences in each mean component and each covariance entry.

    Off-diagonal covariance entries are moved in symmetric pairs and the
    difference halved, so the result matches the convention where Sigma_ij and
    Sigma_ji are treated as separate coordinates.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-7, 1e-3]")
    mu, S = np.array(at.mean), np.array(at.covariance)
    d = mu.shape[0]

    def ev(m, c):
        return fn(GaussianBelief.from_moments(m, c))

    g_mu = np.zeros(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        g_mu[i] = (ev(mu + e, S) - ev(mu - e, S)) / (2 * step)
    g_S = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = step
            val = (ev(mu, S + E) - ev(mu, S - E)) / (2 * step)
            g_S[i, j] = g_S[j, i] = val if i == j else val / 2
    return FdGradient(g_mu, g_S)


def reference_kf(ys, F, Q, H, R, m0, P0) -> list[GaussianBelief]:
    """Textbook predict/update recursion for a linear-Gaussian model."""
    F, Q, H, R = (np.atleast_2d(np.asarray(a, float)) for a in (F, Q, H, R))
    m = np.atleast_1d(np.asarray(m0, float))
    P = np.atleast_2d(np.asarray(P0, float))
    out = []
    for y in ys:
        m = F @ m
        P = F @ P @ F.T + Q
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        m = m + K @ (np.atleast_1d(y) - H @ m)
        P = (np.eye(len(m)) - K @ H) @ P
        P = 0.5 * (P + P.T)
        out.append(GaussianBelief.from_moments(m, P))
    return out


def vi_fixed_point_joint(mu_x, Sigma_xx, mu_y, Sigma_yy, Sigma_xy, y):
    """Stationary point of the ELBO with the likelihood replaced by the
    joint-Gaussian conditional p(y|x).

    The conditional noise Sigma_yy - Sigma_yx Sigma_xx^-1 Sigma_xy plays the
    role of R. Returns (mean, cov) in information form.
    """
    Sxx_inv = np.linalg.inv(Sigma_xx)
    A = Sigma_xy.T @ Sxx_inv
    R_eff = Sigma_yy - A @ Sigma_xy
    R_inv = np.linalg.inv(R_eff)
    y_tilde = y - mu_y + A @ mu_x
    cov = np.linalg.inv(Sxx_inv + A.T @ R_inv @ A)
    mean = cov @ (Sxx_inv @ mu_x + A.T @ R_inv @ y_tilde)
    return mean, cov


def vi_fixed_point_taylor(mu, Sigma, h, H, R, y):
    """ELBO stationary point after a first-order Taylor expansion of h at ``mu``."""
    S_inv = np.linalg.inv(Sigma)
    R_inv = np.linalg.inv(R)
    y_tilde = y - h + H @ mu
    cov = np.linalg.inv(S_inv + H.T @ R_inv @ H)
    mean = cov @ (S_inv @ mu + H.T @ R_inv @ y_tilde)
    return mean, cov
