"""Joint-Gaussian assumed density filtering: predict, the conditional-Gaussian
update, and the EKF and UKF ways of filling in the joint moments."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .gaussian import GaussianBelief, SpdMatrix, _frozen, cholesky, symmetrize
from .models import LinearDynamics, MeasurementModel, wrap_angle

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class JointGaussianStats:
    """Moments of y and its cross-covariance with x under the joint Gaussian."""

    mu_y: np.ndarray
    Sigma_yy: SpdMatrix
    Sigma_xy: np.ndarray

    def __post_init__(self):
        if not isinstance(self.Sigma_yy, SpdMatrix):
            object.__setattr__(self, "Sigma_yy", cholesky(self.Sigma_yy))
        object.__setattr__(self, "mu_y", _frozen(np.atleast_1d(self.mu_y)))
        object.__setattr__(self, "Sigma_xy", _frozen(np.atleast_2d(self.Sigma_xy)))
        p = self.mu_y.shape[0]
        if self.Sigma_yy.dim != p or self.Sigma_xy.shape[1] != p:
            raise ValueError("inconsistent measurement dimensions in joint stats")


@dataclass(frozen=True, eq=False)
class SigmaPoints:
    points: np.ndarray
    weights: np.ndarray
    lam: float


def predict(prior: GaussianBelief, dyn: LinearDynamics) -> GaussianBelief:
    F = dyn.F
    return GaussianBelief.from_moments(F @ prior.mean, symmetrize(F @ prior.covariance @ F.T + dyn.Q))


def joint_gaussian_update(prior: GaussianBelief, stats: JointGaussianStats, y,
                          wrap=None) -> GaussianBelief:
    """Condition x on y under the joint Gaussian assumption.

    The gain is ``Sigma_xy Sigma_yy^{-1}``; residual components flagged in
    ``wrap`` are taken modulo 2 pi.
    """
    if stats.Sigma_xy.shape[0] != prior.dim:
        raise ValueError("cross-covariance does not match the prior dimension")
    resid = np.asarray(y, dtype=float) - stats.mu_y
    if wrap is not None and any(wrap):
        mask = np.asarray(wrap, dtype=bool)
        resid[mask] = wrap_angle(resid[mask])
    gain = stats.Sigma_yy.solve(stats.Sigma_xy.T).T
    mean = prior.mean + gain @ resid
    cov = prior.covariance - gain @ stats.Sigma_yy.matrix @ gain.T
    return GaussianBelief.from_moments(mean, symmetrize(cov))


def ekf_stats(prior: GaussianBelief, model: MeasurementModel) -> JointGaussianStats:
    H = np.asarray(model.jacobian(prior.mean))
    P = prior.covariance
    return JointGaussianStats(
        mu_y=np.asarray(model.h(prior.mean)),
        Sigma_yy=symmetrize(H @ P @ H.T + model.R.matrix),
        Sigma_xy=P @ H.T,
    )


def default_ukf_lambda(d: int) -> float:
    """3 - d, except that state dimensions of 3 or more use 1 to keep w0 > 0."""
    return float(3 - d) if d < 3 else 1.0


def sigma_points(belief: GaussianBelief, lam: float | None = None) -> SigmaPoints:
    """2d+1 symmetric points on the columns of chol((d + lam) Sigma).

    One weight set serves for means and covariances: lam/(d+lam) on the
    centre point and 1/(2(d+lam)) on each of the others.
    """
    d = belief.dim
    lam = default_ukf_lambda(d) if lam is None else float(lam)
    if d + lam <= 0:
        raise ValueError("need d + lambda > 0")
    L = cholesky((d + lam) * belief.covariance).factor
    pts = np.vstack([belief.mean, belief.mean + L.T, belief.mean - L.T])
    w = np.full(2 * d + 1, 1.0 / (2.0 * (d + lam)))
    w[0] = lam / (d + lam)
    return SigmaPoints(pts, w, lam)


def ukf_stats(prior: GaussianBelief, model: MeasurementModel,
              lam: float | None = None) -> JointGaussianStats:
    sp = sigma_points(prior, lam)
    w = sp.weights
    Y = np.atleast_2d(model.h(sp.points))
    mu_y = w @ Y
    mask = model.wrap_mask
    if mask.any():
        # circular mean for angular components
        mu_y[mask] = np.arctan2(w @ np.sin(Y[:, mask]), w @ np.cos(Y[:, mask]))
    dY = model.residual(Y, mu_y)
    dX = sp.points - prior.mean
    S_yy = (dY * w[:, None]).T @ dY + model.R.matrix
    S_xy = (dX * w[:, None]).T @ dY
    return JointGaussianStats(mu_y=mu_y, Sigma_yy=symmetrize(S_yy), Sigma_xy=S_xy)


def ekf_update(prior: GaussianBelief, model: MeasurementModel, y) -> GaussianBelief:
    return joint_gaussian_update(prior, ekf_stats(prior, model), y, model.wrap)


def ukf_update(prior: GaussianBelief, model: MeasurementModel, y,
               lam: float | None = None) -> GaussianBelief:
    return joint_gaussian_update(prior, ukf_stats(prior, model, lam), y, model.wrap)
