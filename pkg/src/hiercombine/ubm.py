"""Univariate normal-normal hierarchical model.

::

    y_i     ~ N(theta_i, sigma_i^2)
    theta_i ~ N(x_i' beta, tau^2)

Closed-form conditional posteriors are provided for arbitrary ``sigma``; the
full Bayesian fit treats the observed standard errors as the true ``sigma_i``
and samples ``beta`` (or ``mu``), ``tau`` and ``theta`` with the no-U-turn
sampler, using a non-centred parameterisation ``theta = X beta + tau * z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .data import Dataset, SourceObservation, validate
from .densities import half_cauchy_log_unc
from .errors import InvalidScale, RankDeficientDesign
from .linalg import solve_weighted_normal_equations
from .mcmc import FitConfig, PosteriorDraws, sample

__all__ = [
    "UbmParams",
    "ubm_mu_closed",
    "ubm_beta_closed",
    "ubm_theta_closed",
    "ubm_weights",
    "fit_ubm",
    "ubm_log_posterior",
    "ubm_layout",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class UbmParams:
    beta: np.ndarray
    tau: float
    sigma: np.ndarray
    theta: np.ndarray | None = None

    def __post_init__(self):
        if not self.tau > 0 or np.any(np.asarray(self.sigma) <= 0):
            raise InvalidScale("tau and sigma must be positive")

    @property
    def mu(self) -> float:
        return float(np.ravel(self.beta)[0])


def _check_scales(tau, sigma):
    sigma = np.asarray(sigma, dtype=float)
    if tau < 0 or not np.isfinite(tau):
        raise InvalidScale("tau must be >= 0")
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise InvalidScale("sigma must be positive")
    return sigma


def ubm_weights(tau, sigma) -> np.ndarray:
    """Precision weights ``1 / (sigma_i^2 + tau^2)``."""
    sigma = _check_scales(tau, sigma)
    return 1.0 / (sigma**2 + tau**2)


def ubm_mu_closed(dataset: Dataset, tau: float, sigma) -> tuple[float, float]:
    """Posterior mean and sd of ``mu`` under a flat prior, ``tau`` and ``sigma`` known."""
    w = ubm_weights(tau, sigma)
    y = dataset.y
    total = w.sum()
    return float(np.dot(w, y) / total), float(1.0 / math.sqrt(total))


def ubm_beta_closed(dataset: Dataset, tau: float, sigma) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of ``beta`` under a flat prior.

    Raises
    ------
    RankDeficientDesign
    """
    w = ubm_weights(tau, sigma)
    return solve_weighted_normal_equations(dataset.X, dataset.y, w)


def _xb(obs, beta) -> np.ndarray | float:
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if isinstance(obs, SourceObservation):
        x = np.array(obs.x, dtype=float) if obs.x is not None else np.ones(1)
        return float(x[: beta.size] @ beta)
    return obs.X @ beta


def ubm_theta_closed(obs, beta, tau: float, sigma) -> tuple:
    """Posterior mean and sd of ``theta_i`` given ``beta``, ``tau`` and ``sigma_i``.

    ``obs`` may be a single :class:`SourceObservation` (scalar result) or a
    :class:`Dataset` (arrays over sources).  The mean is
    ``gamma * y + (1 - gamma) * x'beta`` with ``gamma = tau^2 / (tau^2 + sigma^2)``.
    """
    sigma = _check_scales(tau, sigma)
    y = obs.y
    gamma = tau**2 / (tau**2 + sigma**2)
    mean = gamma * y + (1.0 - gamma) * _xb(obs, beta)
    sd = sigma * np.sqrt(gamma)
    if np.ndim(mean) == 0:
        return float(mean), float(sd)
    return mean, sd


# --- joint log density --------------------------------------------------------


def ubm_layout(p: int, n: int, fixed_tau: bool) -> dict:
    """Slices of the unconstrained parameter vector: ``beta``, ``log_tau``, ``z``."""
    k = p
    out = {"beta": slice(0, p)}
    if not fixed_tau:
        out["log_tau"] = slice(k, k + 1)
        k += 1
    out["z"] = slice(k, k + n)
    out["dim"] = k + n
    return out


@njit(cache=True, error_model="numpy")
def _ubm_logp_grad(q, args):
    y, s, X, fixed_tau, prior = args
    n, p = X.shape
    tau_scale = prior[0]
    beta_sd = prior[1]
    grad = np.zeros(q.shape[0])
    beta = q[:p]
    if fixed_tau.shape[0] == 1:
        tau = fixed_tau[0]
        k = p
        lp = 0.0
    else:
        log_tau = q[p]
        tau = math.exp(log_tau)
        k = p + 1
        lp, d = half_cauchy_log_unc(log_tau, tau_scale)
        grad[p] = d
    z = q[k:k + n]

    if beta_sd > 0:
        for j in range(p):
            lp += -0.5 * _LOG_2PI - math.log(beta_sd) - 0.5 * (beta[j] / beta_sd) ** 2
            grad[j] -= beta[j] / beta_sd**2

    dlog_tau = 0.0
    for i in range(n):
        m = 0.0
        for j in range(p):
            m += X[i, j] * beta[j]
        theta = m + tau * z[i]
        r = (y[i] - theta) / s[i]
        lp += -_LOG_2PI - math.log(s[i]) - 0.5 * r * r - 0.5 * z[i] * z[i]
        g_theta = r / s[i]
        grad[k + i] = g_theta * tau - z[i]
        for j in range(p):
            grad[j] += g_theta * X[i, j]
        dlog_tau += g_theta * tau * z[i]
    if fixed_tau.shape[0] == 0:
        grad[p] += dlog_tau
    return lp, grad


def _ubm_args(dataset: Dataset, config: FitConfig, tau):
    X = np.ascontiguousarray(dataset.X)
    fixed_tau = np.array([float(tau)]) if tau is not None else np.zeros(0)
    if dataset.has_covariates:
        beta_sd = config.prior("beta_sd")
    else:
        mu_sd = config.prior("mu_sd")
        beta_sd = float(mu_sd) if mu_sd is not None else 0.0
    prior = np.array([config.prior("tau"), beta_sd])
    return (np.ascontiguousarray(dataset.y), np.ascontiguousarray(dataset.s), X, fixed_tau, prior)


def ubm_log_posterior(dataset: Dataset, q, config: FitConfig | None = None, tau=None):
    """Log posterior density (up to the improper-prior constant) and gradient.

    ``q`` follows :func:`ubm_layout`.  Passing ``tau`` holds it fixed.
    """
    args = _ubm_args(dataset, config or FitConfig(), tau)
    lp, g = _ubm_logp_grad(np.asarray(q, dtype=float), args)
    return float(lp), g


def _param_names(dataset: Dataset, fixed_tau: bool):
    n, p = dataset.n, dataset.X.shape[1]
    head = [f"beta[{j + 1}]" for j in range(p)] if dataset.has_covariates else ["mu"]
    if not fixed_tau:
        head.append("tau")
    return head + [f"theta[{i + 1}]" for i in range(n)]


def fit_ubm(dataset: Dataset, config: FitConfig | None = None, *, tau: float | None = None,
            init=None) -> PosteriorDraws:
    """Fit the univariate model with ``sigma_i`` fixed at the observed ``s_i``.

    Parameters
    ----------
    dataset : Dataset
    config : FitConfig, optional
    tau : float, optional
        Hold the between-source sd fixed instead of sampling it under its
        half-Cauchy prior.

    Returns
    -------
    PosteriorDraws
        Columns ``mu`` (or ``beta[j]``), ``tau`` unless fixed, and
        ``theta[i]``.  ``fixed`` holds ``sigma`` (and ``tau`` when fixed).
    """
    config = config or FitConfig()
    validate(dataset, min_sources=2)
    if dataset.has_covariates and np.linalg.matrix_rank(dataset.X) < dataset.p:
        raise RankDeficientDesign("design matrix is rank deficient")
    n, p = dataset.n, dataset.X.shape[1]
    layout = ubm_layout(p, n, tau is not None)
    args = _ubm_args(dataset, config, tau)
    X = args[2]

    def transform(u):
        beta = u[:, layout["beta"]]
        t = np.full((u.shape[0], 1), float(tau)) if tau is not None else np.exp(u[:, layout["log_tau"]])
        theta = beta @ X.T + t * u[:, layout["z"]]
        cols = [beta] + ([t] if tau is None else []) + [theta]
        return np.hstack(cols)

    fixed = {"sigma": dataset.s.tolist()}
    if tau is not None:
        fixed["tau"] = float(tau)
    return sample(
        _ubm_logp_grad, layout["dim"], config, args=args,
        names=_param_names(dataset, tau is not None), transform=transform,
        init=init, model="ubm", fixed=fixed,
    )
