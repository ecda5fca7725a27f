"""Bivariate hierarchical model for estimates and their log standard errors.

::

    (y_i, log s_i)         ~ N2((theta_i, log sigma_i),
                                [[sigma_i^2, rho1 sigma_i sigma_s_i],
                                 [.,         sigma_s_i^2]])
    (theta_i, log sigma_i) ~ N2((x_i' beta_theta, x_i' beta_sigma),
                                [[r_theta^2, rho2 r_theta r_sigma],
                                 [.,         r_sigma^2]])

Unconstrained parameter layout (fixed, also the column order of raw draws)::

    beta_theta (p) | beta_sigma (p) | log r_theta | log r_sigma
    | atanh rho1 | atanh rho2 | log sigma_s (n, omitted when fixed)
    | z_theta (n) | z_sigma (n)

Without covariates ``p = 1`` and the betas are the population means
``mu_theta`` and ``mu_sigma``.  Latents are non-centred::

    theta_i     = x_i' beta_theta + r_theta * z_theta_i
    log sigma_i = x_i' beta_sigma + r_sigma * (rho2 * z_theta_i + sqrt(1 - rho2^2) * z_sigma_i)

which is the Cholesky parameterisation of the level-2 covariance;
``rho2 = tanh(u)`` is the free element of the correlation Cholesky factor
and carries the LKJ prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .data import Dataset, SourceObservation, validate
from .densities import half_cauchy_log_unc, lkj2_log_unc, lkj_log_normalizer, uniform_corr_log_unc
from .errors import (
    DegenerateUncertainty,
    InvalidCorrelation,
    InvalidScale,
    NonFiniteDensity,
    RankDeficientDesign,
    TooFewSources,
    ValidationError,
)
from .linalg import check_rank, solve_weighted_normal_equations
from .mcmc import FitConfig, PosteriorDraws, sample
from .rng import substream

__all__ = [
    "BbmParams",
    "ShrinkageWeights",
    "bbm_conditional_y",
    "bbm_shrinkage",
    "bbm_mu_theta_closed",
    "bbm_beta_theta_closed",
    "bbm_theta_closed",
    "bbm_layout",
    "bbm_log_posterior",
    "bbm_log_joint",
    "bbm_params_from_unconstrained",
    "bbm_unconstrained_from_params",
    "fit_bbm",
    "set_sigma_s_empirical",
    "params_from_draws",
    "collapsed_layout",
    "PARAMETERIZATIONS",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class BbmParams:
    """One value of every model quantity.

    ``beta_theta`` and ``beta_sigma`` have length ``p`` (length 1 holds the
    population means).  ``sigma_s``, ``theta`` and ``sigma`` are per source;
    ``sigma_s`` may also be a scalar shared by all sources.
    """

    beta_theta: np.ndarray
    beta_sigma: np.ndarray
    r_theta: float
    r_sigma: float
    rho1: float
    rho2: float
    sigma_s: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for name in ("beta_theta", "beta_sigma", "sigma_s", "theta", "sigma"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if not (-1.0 < self.rho1 < 1.0) or not (-1.0 < self.rho2 < 1.0):
            raise InvalidCorrelation("rho1 and rho2 must lie in (-1, 1)")
        if not (self.r_theta > 0 and self.r_sigma > 0):
            raise InvalidScale("r_theta and r_sigma must be positive")
        if np.any(self.sigma_s <= 0) or np.any(self.sigma <= 0):
            raise InvalidScale("sigma_s and sigma must be positive")

    @property
    def mu_theta(self) -> float:
        return float(self.beta_theta[0])

    @property
    def mu_sigma(self) -> float:
        return float(self.beta_sigma[0])

    @property
    def log_sigma(self) -> np.ndarray:
        return np.log(self.sigma)


@dataclass(frozen=True)
class ShrinkageWeights:
    """Per-source precision ``xi``, shrinkage ``zeta`` and adjusted outcome."""

    xi: np.ndarray
    zeta: np.ndarray
    y_adjusted: np.ndarray

    @property
    def standardized(self) -> np.ndarray:
        return self.xi / self.xi.sum()


def _obs_arrays(obs):
    """``(y, log s, X)`` for a single observation or a dataset."""
    if isinstance(obs, SourceObservation):
        x = np.array(obs.x, dtype=float)[None, :] if obs.x is not None else np.ones((1, 1))
        return np.array([obs.y]), np.array([math.log(obs.s)]), x
    return obs.y, obs.log_s, obs.X


def _squeeze(a):
    return float(a[0]) if np.size(a) == 1 else a


def bbm_conditional_y(obs, params: BbmParams):
    """Mean and sd of ``y_i`` given ``log s_i`` and the source's parameters.

    Mean ``theta + rho1 (sigma / sigma_s)(log s - log sigma)``, sd
    ``sigma sqrt(1 - rho1^2)``.
    """
    _, ls, _ = _obs_arrays(obs)
    sig = params.sigma
    mean = params.theta + params.rho1 * sig / params.sigma_s * (ls - np.log(sig))
    sd = sig * math.sqrt(1.0 - params.rho1**2)
    return _squeeze(mean), _squeeze(np.broadcast_to(sd, np.shape(mean)))


def bbm_shrinkage(dataset: Dataset, params: BbmParams) -> ShrinkageWeights:
    """Precision weights ``xi_i``, shrinkage factors ``zeta_i`` and adjusted outcomes.

    The adjusted outcome removes both correlation effects from ``y_i``::

        y_i - rho2 (r_theta / r_sigma)(log sigma_i - x_i' beta_sigma)
            - rho1 (sigma_i / sigma_s_i)(log s_i - log sigma_i)
    """
    y, ls, X = _obs_arrays(dataset)
    p = params
    between = p.r_theta**2 * (1.0 - p.rho2**2)
    within = p.sigma**2 * (1.0 - p.rho1**2)
    xi = 1.0 / (within + between)
    zeta = between / (between + within)
    lsig = np.log(p.sigma)
    m_sigma = X[:, : p.beta_sigma.size] @ p.beta_sigma
    y_adj = (y - p.rho2 * p.r_theta / p.r_sigma * (lsig - m_sigma)
             - p.rho1 * p.sigma / p.sigma_s * (ls - lsig))
    return ShrinkageWeights(xi=xi, zeta=zeta, y_adjusted=y_adj)


def bbm_mu_theta_closed(dataset: Dataset, params: BbmParams) -> tuple[float, float]:
    """Posterior mean and sd of ``mu_theta`` under a flat prior, all else known."""
    w = bbm_shrinkage(dataset, params)
    total = w.xi.sum()
    return float(np.dot(w.xi, w.y_adjusted) / total), float(1.0 / math.sqrt(total))


def bbm_beta_theta_closed(dataset: Dataset, params: BbmParams):
    """Posterior mean and covariance of ``beta_theta`` under a flat prior.

    Raises
    ------
    RankDeficientDesign
    """
    w = bbm_shrinkage(dataset, params)
    return solve_weighted_normal_equations(dataset.X, w.y_adjusted, w.xi)


def bbm_theta_closed(obs, params: BbmParams):
    """Posterior mean and sd of ``theta_i`` given everything else.

    ``zeta (y - rho1 (sigma/sigma_s)(log s - log sigma))
    + (1 - zeta)(x'beta_theta + rho2 (r_theta/r_sigma)(log sigma - x'beta_sigma))``
    with sd ``sqrt(zeta sigma^2 (1 - rho1^2))``.
    """
    y, ls, X = _obs_arrays(obs)
    p = params
    between = p.r_theta**2 * (1.0 - p.rho2**2)
    within = p.sigma**2 * (1.0 - p.rho1**2)
    zeta = between / (between + within)
    lsig = np.log(p.sigma)
    direct = y - p.rho1 * p.sigma / p.sigma_s * (ls - lsig)
    m_theta = X[:, : p.beta_theta.size] @ p.beta_theta
    m_sigma = X[:, : p.beta_sigma.size] @ p.beta_sigma
    synthetic = m_theta + p.rho2 * p.r_theta / p.r_sigma * (lsig - m_sigma)
    mean = zeta * direct + (1.0 - zeta) * synthetic
    sd = np.sqrt(zeta * within)
    return _squeeze(mean), _squeeze(np.broadcast_to(sd, np.shape(mean)))


# --- log posterior -------------------------------------------------------------


def bbm_layout(p: int, n: int, fixed_sigma_s: bool = False) -> dict:
    """Slices of the unconstrained vector for each parameter block."""
    out = {
        "beta_theta": slice(0, p),
        "beta_sigma": slice(p, 2 * p),
        "log_r_theta": 2 * p,
        "log_r_sigma": 2 * p + 1,
        "u_rho1": 2 * p + 2,
        "u_rho2": 2 * p + 3,
    }
    k = 2 * p + 4
    if not fixed_sigma_s:
        out["log_sigma_s"] = slice(k, k + n)
        k += n
    out["z_theta"] = slice(k, k + n)
    out["z_sigma"] = slice(k + n, k + 2 * n)
    out["dim"] = k + 2 * n
    return out


@njit(cache=True, error_model="numpy")
def _bbm_logp_grad(q, args):
    y, ls, X, fixed_ss, prior = args
    n, p = X.shape
    free_ss = fixed_ss.shape[0] == 0
    grad = np.zeros(q.shape[0])

    ir = 2 * p
    lr_t = q[ir]
    lr_s = q[ir + 1]
    u1 = q[ir + 2]
    u2 = q[ir + 3]
    k = ir + 4
    kss = k
    if free_ss:
        k += n
    kz1 = k
    kz2 = k + n

    r_t = math.exp(lr_t)
    r_s = math.exp(lr_s)
    rho1 = math.tanh(u1)
    rho2 = math.tanh(u2)
    c2 = math.sqrt(max(1.0 - rho2 * rho2, 0.0))
    D = 1.0 - rho1 * rho1
    if not (D > 0.0 and c2 > 0.0 and r_t > 0.0 and r_s > 0.0):
        return -np.inf, grad

    # priors on hyper-parameters, each with its log Jacobian
    lp, d = half_cauchy_log_unc(lr_t, prior[0])
    grad[ir] += d
    v, d = half_cauchy_log_unc(lr_s, prior[1])
    lp += v
    grad[ir + 1] += d
    v, d = uniform_corr_log_unc(u1)
    lp += v
    grad[ir + 2] += d
    v, d = lkj2_log_unc(u2, prior[3], prior[4])
    lp += v
    grad[ir + 3] += d
    bsd = prior[5]
    if bsd > 0.0:
        for j in range(2 * p):
            lp += -0.5 * _LOG_2PI - math.log(bsd) - 0.5 * (q[j] / bsd) ** 2
            grad[j] -= q[j] / bsd**2

    log_D = math.log(D)
    d_rho1 = 0.0
    d_rho2 = 0.0
    d_lrt = 0.0
    d_lrs = 0.0
    for i in range(n):
        z1 = q[kz1 + i]
        z2 = q[kz2 + i]
        m_t = 0.0
        m_s = 0.0
        for j in range(p):
            m_t += X[i, j] * q[j]
            m_s += X[i, j] * q[p + j]
        e_s = rho2 * z1 + c2 * z2
        theta = m_t + r_t * z1
        lsig = m_s + r_s * e_s
        sig = math.exp(lsig)
        if free_ss:
            lss = q[kss + i]
            ss = math.exp(lss)
            v, d = half_cauchy_log_unc(lss, prior[2])
            lp += v
            grad[kss + i] += d
        else:
            ss = fixed_ss[i]
            lss = math.log(ss)

        a = (y[i] - theta) / sig
        b = (ls[i] - lsig) / ss
        N = a * a - 2.0 * rho1 * a * b + b * b
        lp += (-2.0 * _LOG_2PI - lsig - lss - 0.5 * log_D - 0.5 * N / D
               - 0.5 * (z1 * z1 + z2 * z2))

        A = -(a - rho1 * b) / D
        B = -(b - rho1 * a) / D
        g_theta = -A / sig
        g_lsig = -1.0 - A * a - B / ss
        if free_ss:
            grad[kss + i] += -1.0 - B * b
        d_rho1 += rho1 / D + a * b / D - N * rho1 / (D * D)

        for j in range(p):
            grad[j] += g_theta * X[i, j]
            grad[p + j] += g_lsig * X[i, j]
        d_lrt += g_theta * r_t * z1
        d_lrs += g_lsig * r_s * e_s
        d_rho2 += g_lsig * r_s * (z1 - rho2 * z2 / c2)
        grad[kz1 + i] = g_theta * r_t + g_lsig * r_s * rho2 - z1
        grad[kz2 + i] = g_lsig * r_s * c2 - z2

    grad[ir] += d_lrt
    grad[ir + 1] += d_lrs
    grad[ir + 2] += d_rho1 * D
    grad[ir + 3] += d_rho2 * (1.0 - rho2 * rho2)
    if not math.isfinite(lp):
        return -np.inf, grad
    return lp, grad


def collapsed_layout(p: int, n: int, fixed_sigma_s: bool = False) -> dict:
    """Layout of the sampler's coordinates; ``v`` replaces ``z_theta, z_sigma``."""
    out = bbm_layout(p, n, fixed_sigma_s)
    k = out["z_theta"].start
    del out["z_theta"], out["z_sigma"]
    out["v"] = slice(k, k + n)
    out["dim"] = k + n
    return out


@njit(cache=True, error_model="numpy")
def _collapsed_logp_grad(q, args):
    """Posterior with ``theta`` integrated out and ``log sigma`` partially centred.

    Per source, with ``R = r_sigma^2``, ``S = sigma_s^2``, ``K = R + S``::

        log sigma = mu_post + s_post * v,
        mu_post = (x'beta_sigma S + log s R) / K,  s_post = sqrt(R S / K)

    so that ``N(log sigma | level 2) N(log s | log sigma) |d log sigma / dv|``
    equals ``N(log s | x'beta_sigma, K) N(v | 0, 1)``.  With ``theta``
    integrated out, ``y ~ N(m, V)`` where ``m = x'beta_theta
    + rho2 r_theta z + rho1 sigma e``, ``V = r_theta^2 (1 - rho2^2) +
    sigma^2 (1 - rho1^2)``, ``z`` the level-2 and ``e`` the level-1
    standardised residual of ``log sigma`` and ``log s``.
    """
    y, ls, X, fixed_ss, prior = args
    n, p = X.shape
    free_ss = fixed_ss.shape[0] == 0
    grad = np.zeros(q.shape[0])

    ir = 2 * p
    lr_t = q[ir]
    lr_s = q[ir + 1]
    u1 = q[ir + 2]
    u2 = q[ir + 3]
    k = ir + 4
    kss = k
    if free_ss:
        k += n
    kv = k

    r_t = math.exp(lr_t)
    r_s = math.exp(lr_s)
    rho1 = math.tanh(u1)
    rho2 = math.tanh(u2)
    D1 = 1.0 - rho1 * rho1
    D2 = 1.0 - rho2 * rho2
    if not (D1 > 0.0 and D2 > 0.0 and r_t > 0.0 and r_s > 0.0):
        return -np.inf, grad

    lp, d = half_cauchy_log_unc(lr_t, prior[0])
    grad[ir] += d
    val, d = half_cauchy_log_unc(lr_s, prior[1])
    lp += val
    grad[ir + 1] += d
    val, d = uniform_corr_log_unc(u1)
    lp += val
    grad[ir + 2] += d
    val, d = lkj2_log_unc(u2, prior[3], prior[4])
    lp += val
    grad[ir + 3] += d
    bsd = prior[5]
    if bsd > 0.0:
        for j in range(2 * p):
            lp += -0.5 * _LOG_2PI - math.log(bsd) - 0.5 * (q[j] / bsd) ** 2
            grad[j] -= q[j] / bsd**2

    R = r_s * r_s
    A = r_t * r_t * D2
    d_rho1 = 0.0
    d_rho2 = 0.0
    d_lrt = 0.0
    d_lrs = 0.0
    for i in range(n):
        v = q[kv + i]
        m_t = 0.0
        m_s = 0.0
        for j in range(p):
            m_t += X[i, j] * q[j]
            m_s += X[i, j] * q[p + j]
        if free_ss:
            lss = q[kss + i]
            ss = math.exp(lss)
            val, d = half_cauchy_log_unc(lss, prior[2])
            lp += val
            grad[kss + i] += d
        else:
            ss = fixed_ss[i]
        S = ss * ss
        K = R + S
        dev = ls[i] - m_s
        s_post = r_s * ss / math.sqrt(K)
        lsig = (m_s * S + ls[i] * R) / K + s_post * v
        sig = math.exp(lsig)
        z = (lsig - m_s) / r_s
        e = (ls[i] - lsig) / ss

        # log N(log s | x'beta_sigma, K) + log N(v | 0, 1)
        lp += -_LOG_2PI - 0.5 * math.log(K) - 0.5 * dev * dev / K - 0.5 * v * v
        dQ_dK = -0.5 / K + 0.5 * dev * dev / (K * K)

        V = A + sig * sig * D1
        m = m_t + rho2 * r_t * z + rho1 * sig * e
        r = y[i] - m
        lp += -0.5 * _LOG_2PI - 0.5 * math.log(V) - 0.5 * r * r / V
        w = r / V
        h = -0.5 / V + 0.5 * r * r / (V * V)

        dY_dz = w * rho2 * r_t
        dY_de = w * rho1 * sig
        dY_dsig = w * rho1 * e + 2.0 * h * sig * D1
        g_lsig = sig * dY_dsig + dY_dz / r_s - dY_de / ss

        # d log sigma / d(x'beta_sigma, log r_sigma, log sigma_s)
        cross = 2.0 * R * S * (ls[i] - m_s) / (K * K)
        dl_dm = S / K
        dl_dlrs = cross + v * s_post * S / K
        dl_dlss = -cross + v * s_post * R / K

        grad[kv + i] = -v + g_lsig * s_post
        g_ms = dev / K - dY_dz / r_s + g_lsig * dl_dm
        for j in range(p):
            grad[j] += w * X[i, j]
            grad[p + j] += g_ms * X[i, j]
        d_lrs += 2.0 * R * dQ_dK - z * dY_dz + g_lsig * dl_dlrs
        if free_ss:
            grad[kss + i] += 2.0 * S * dQ_dK - e * dY_de + g_lsig * dl_dlss
        d_lrt += w * rho2 * r_t * z + 2.0 * h * A
        d_rho1 += w * sig * e - 2.0 * h * rho1 * sig * sig
        d_rho2 += w * r_t * z - 2.0 * h * rho2 * r_t * r_t

    grad[ir] += d_lrt
    grad[ir + 1] += d_lrs
    grad[ir + 2] += d_rho1 * D1
    grad[ir + 3] += d_rho2 * D2
    if not math.isfinite(lp):
        return -np.inf, grad
    return lp, grad


def _prior_vector(config: FitConfig, has_covariates: bool) -> np.ndarray:
    eta = config.prior("lkj_eta")
    if has_covariates:
        bsd = config.prior("beta_sd")
    else:
        mu_sd = config.prior("mu_sd")
        bsd = float(mu_sd) if mu_sd is not None else 0.0
    return np.array([
        config.prior("r_theta"), config.prior("r_sigma"), config.prior("sigma_s"),
        eta, lkj_log_normalizer(eta), bsd,
    ])


def _resolve_sigma_s(dataset: Dataset, fix_sigma_s):
    if fix_sigma_s is None:
        return None
    if isinstance(fix_sigma_s, str):
        if fix_sigma_s != "empirical":
            raise ValidationError(f"unknown sigma_s option {fix_sigma_s!r}")
        return set_sigma_s_empirical(dataset)
    arr = np.broadcast_to(np.asarray(fix_sigma_s, dtype=float), (dataset.n,)).copy()
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise InvalidScale("fixed sigma_s must be positive")
    return arr


def _bbm_args(dataset: Dataset, config: FitConfig, fixed_ss):
    fixed = np.zeros(0) if fixed_ss is None else np.ascontiguousarray(fixed_ss, dtype=float)
    return (
        np.ascontiguousarray(dataset.y),
        np.ascontiguousarray(dataset.log_s),
        np.ascontiguousarray(dataset.X),
        fixed,
        _prior_vector(config, dataset.has_covariates),
    )


def bbm_log_posterior(dataset: Dataset, q, config: FitConfig | None = None, fix_sigma_s=None,
                      check=False):
    """Log posterior on the unconstrained scale and its exact gradient.

    Includes both model levels, all priors (the flat priors on population
    means contribute nothing) and every transform Jacobian.  Normalising
    constants of proper densities are kept.

    Parameters
    ----------
    q : array_like
        Unconstrained vector in the order given by :func:`bbm_layout`.
    check : bool
        Raise :class:`NonFiniteDensity` instead of returning ``-inf``.

    Returns
    -------
    (float, ndarray)
    """
    config = config or FitConfig()
    fixed = _resolve_sigma_s(dataset, fix_sigma_s)
    args = _bbm_args(dataset, config, fixed)
    q = np.asarray(q, dtype=float)
    lp, g = _bbm_logp_grad(q, args)
    if check:
        if not np.all(np.isfinite(q)):
            raise NonFiniteDensity(int(np.flatnonzero(~np.isfinite(q))[0]), "non-finite coordinate")
        if not math.isfinite(lp):
            raise NonFiniteDensity(-1)
        bad = np.flatnonzero(~np.isfinite(g))
        if bad.size:
            raise NonFiniteDensity(int(bad[0]), "non-finite gradient")
    return float(lp), g


def bbm_params_from_unconstrained(dataset: Dataset, q, fixed_sigma_s=None) -> BbmParams:
    q = np.asarray(q, dtype=float)
    n, p = dataset.n, dataset.X.shape[1]
    L = bbm_layout(p, n, fixed_sigma_s is not None)
    X = dataset.X
    r_t = math.exp(q[L["log_r_theta"]])
    r_s = math.exp(q[L["log_r_sigma"]])
    rho1 = math.tanh(q[L["u_rho1"]])
    rho2 = math.tanh(q[L["u_rho2"]])
    z1, z2 = q[L["z_theta"]], q[L["z_sigma"]]
    bt, bs = q[L["beta_theta"]], q[L["beta_sigma"]]
    theta = X @ bt + r_t * z1
    lsig = X @ bs + r_s * (rho2 * z1 + math.sqrt(1 - rho2**2) * z2)
    ss = np.exp(q[L["log_sigma_s"]]) if fixed_sigma_s is None else np.asarray(fixed_sigma_s, dtype=float)
    return BbmParams(bt, bs, r_t, r_s, rho1, rho2, ss, theta, np.exp(lsig))


def bbm_unconstrained_from_params(dataset: Dataset, params: BbmParams, fixed_sigma_s=False) -> np.ndarray:
    """Inverse of :func:`bbm_params_from_unconstrained`."""
    n, p = dataset.n, dataset.X.shape[1]
    L = bbm_layout(p, n, fixed_sigma_s)
    X = dataset.X
    q = np.zeros(L["dim"])
    q[L["beta_theta"]] = params.beta_theta
    q[L["beta_sigma"]] = params.beta_sigma
    q[L["log_r_theta"]] = math.log(params.r_theta)
    q[L["log_r_sigma"]] = math.log(params.r_sigma)
    q[L["u_rho1"]] = math.atanh(params.rho1)
    q[L["u_rho2"]] = math.atanh(params.rho2)
    if not fixed_sigma_s:
        q[L["log_sigma_s"]] = np.log(np.broadcast_to(params.sigma_s, (n,)))
    z1 = (params.theta - X @ params.beta_theta) / params.r_theta
    z2 = ((params.log_sigma - X @ params.beta_sigma) / params.r_sigma - params.rho2 * z1) / math.sqrt(1 - params.rho2**2)
    q[L["z_theta"]] = z1
    q[L["z_sigma"]] = z2
    return q


def bbm_log_joint(dataset: Dataset, params: BbmParams) -> float:
    """Centred log density of the data and latents given the hyper-parameters.

    ``sum_i log N2((y_i, log s_i) | level 1) + log N2((theta_i, log sigma_i) | level 2)``,
    with no priors and no Jacobians.  Written independently of the sampler's
    kernel and used to cross-check it.
    """
    y, ls, X = _obs_arrays(dataset)
    p = params
    lsig = np.log(p.sigma)
    ss = np.broadcast_to(p.sigma_s, y.shape)
    c1 = np.stack([np.stack([p.sigma**2, p.rho1 * p.sigma * ss], -1),
                   np.stack([p.rho1 * p.sigma * ss, ss**2], -1)], -2)
    r1 = np.stack([y - p.theta, ls - lsig], -1)
    m_t = X[:, : p.beta_theta.size] @ p.beta_theta
    m_s = X[:, : p.beta_sigma.size] @ p.beta_sigma
    cov2 = np.array([[p.r_theta**2, p.rho2 * p.r_theta * p.r_sigma],
                     [p.rho2 * p.r_theta * p.r_sigma, p.r_sigma**2]])
    r2 = np.stack([p.theta - m_t, lsig - m_s], -1)

    def mvn(r, c):
        inv = np.linalg.inv(c)
        quad = np.einsum("...i,...ij,...j->...", r, inv, r)
        return -_LOG_2PI - 0.5 * np.log(np.linalg.det(c)) - 0.5 * quad

    return float(np.sum(mvn(r1, c1)) + np.sum(mvn(r2, cov2)))


# --- fitting ---------------------------------------------------------------------


def set_sigma_s_empirical(dataset: Dataset) -> np.ndarray:
    """Constant ``sigma_s`` equal to the sample sd (divisor ``n - 1``) of ``log s``.

    Raises
    ------
    TooFewSources
        Fewer than two sources.
    DegenerateUncertainty
        All ``log s_i`` equal.
    """
    if dataset.n < 2:
        raise TooFewSources("the empirical sd of log s needs at least 2 sources")
    sd = float(np.std(dataset.log_s, ddof=1))
    if not sd > 0:
        raise DegenerateUncertainty("log s has zero spread; sigma_s must be > 0")
    return np.full(dataset.n, sd)


def _names(dataset: Dataset, fixed_ss: bool):
    n, p = dataset.n, dataset.X.shape[1]
    if dataset.has_covariates:
        head = [f"beta_theta[{j + 1}]" for j in range(p)] + [f"beta_sigma[{j + 1}]" for j in range(p)]
    else:
        head = ["mu_theta", "mu_sigma"]
    head += ["r_theta", "r_sigma", "rho1", "rho2"]
    if not fixed_ss:
        head += [f"sigma_s[{i + 1}]" for i in range(n)]
    return head + [f"theta[{i + 1}]" for i in range(n)] + [f"sigma[{i + 1}]" for i in range(n)]


def _transform(dataset: Dataset, fixed_ss: bool):
    n, p = dataset.n, dataset.X.shape[1]
    L = bbm_layout(p, n, fixed_ss)
    X = dataset.X

    def transform(u):
        r_t = np.exp(u[:, [L["log_r_theta"]]])
        r_s = np.exp(u[:, [L["log_r_sigma"]]])
        rho1 = np.tanh(u[:, [L["u_rho1"]]])
        rho2 = np.tanh(u[:, [L["u_rho2"]]])
        bt, bs = u[:, L["beta_theta"]], u[:, L["beta_sigma"]]
        z1, z2 = u[:, L["z_theta"]], u[:, L["z_sigma"]]
        theta = bt @ X.T + r_t * z1
        lsig = bs @ X.T + r_s * (rho2 * z1 + np.sqrt(1.0 - rho2**2) * z2)
        cols = [bt, bs, r_t, r_s, rho1, rho2]
        if not fixed_ss:
            cols.append(np.exp(u[:, L["log_sigma_s"]]))
        cols += [theta, np.exp(lsig)]
        return np.hstack(cols)

    return transform


def _collapsed_transform(dataset: Dataset, fixed_ss, seed: int):
    """Map collapsed coordinates to the model quantities, drawing ``theta``.

    ``theta_i`` is drawn from its exact conditional posterior given the rest
    of the draw (the closed form of :func:`bbm_theta_closed`), using the
    stream ``(seed, "theta")``.
    """
    n, p = dataset.n, dataset.X.shape[1]
    L = collapsed_layout(p, n, fixed_ss is not None)
    X, y, ls = dataset.X, dataset.y, dataset.log_s

    def transform(u):
        r_t = np.exp(u[:, [L["log_r_theta"]]])
        r_s = np.exp(u[:, [L["log_r_sigma"]]])
        rho1 = np.tanh(u[:, [L["u_rho1"]]])
        rho2 = np.tanh(u[:, [L["u_rho2"]]])
        bt, bs = u[:, L["beta_theta"]], u[:, L["beta_sigma"]]
        ss = np.exp(u[:, L["log_sigma_s"]]) if fixed_ss is None else np.broadcast_to(fixed_ss, (u.shape[0], n))
        m_t, m_s = bt @ X.T, bs @ X.T
        R, S = r_s**2, ss**2
        K = R + S
        lsig = (m_s * S + ls * R) / K + np.sqrt(R * S / K) * u[:, L["v"]]
        sig = np.exp(lsig)
        between = r_t**2 * (1.0 - rho2**2)
        within = sig**2 * (1.0 - rho1**2)
        zeta = between / (between + within)
        direct = y - rho1 * sig / ss * (ls - lsig)
        synthetic = m_t + rho2 * r_t / r_s * (lsig - m_s)
        mean = zeta * direct + (1.0 - zeta) * synthetic
        sd = np.sqrt(zeta * within)
        theta = mean + sd * substream(seed, "theta").standard_normal(mean.shape)
        cols = [bt, bs, r_t, r_s, rho1, rho2]
        if fixed_ss is None:
            cols.append(ss)
        cols += [theta, sig]
        return np.hstack(cols)

    return transform


#: Sampler parameterisations accepted by :func:`fit_bbm`.
PARAMETERIZATIONS = ("collapsed", "full")


def fit_bbm(dataset: Dataset, config: FitConfig | None = None, *, fix_sigma_s=None,
            init=None, parameterization: str = "collapsed") -> PosteriorDraws:
    """Fit the bivariate model with the no-U-turn sampler.

    Parameters
    ----------
    dataset : Dataset
        At least 3 sources (``p + 2`` with covariates).
    config : FitConfig, optional
    fix_sigma_s : None, "empirical", float or array
        Hold ``sigma_s`` fixed instead of sampling it.  ``"empirical"`` uses
        :func:`set_sigma_s_empirical`.  Fixed values are recorded in
        ``PosteriorDraws.fixed`` and no ``sigma_s`` columns are produced.
    init : array_like, optional
        Starting point in the chosen parameterisation's coordinates.
    parameterization : {"collapsed", "full"}
        ``"full"`` samples every latent directly in the layout of
        :func:`bbm_layout`.  ``"collapsed"`` (default) samples the posterior
        with ``theta`` integrated out and ``log sigma`` partially centred (see
        :func:`collapsed_layout`), then draws each ``theta_i`` from its exact
        conditional.  Both target the same joint posterior; the collapsed
        form avoids the narrow ridges that appear when ``rho1`` is near
        ``+/-1`` or a ``sigma_s_i`` is small.

    Returns
    -------
    PosteriorDraws
        Columns ``mu_theta, mu_sigma`` (or ``beta_theta[j], beta_sigma[j]``),
        ``r_theta, r_sigma, rho1, rho2``, ``sigma_s[i]`` unless fixed,
        ``theta[i]`` and ``sigma[i]``.
    """
    config = config or FitConfig()
    if parameterization not in PARAMETERIZATIONS:
        raise ValidationError(f"parameterization must be one of {PARAMETERIZATIONS}")
    validate(dataset, min_sources=3)
    if dataset.has_covariates:
        check_rank(dataset.X)
    fixed = _resolve_sigma_s(dataset, fix_sigma_s)
    args = _bbm_args(dataset, config, fixed)
    n, p = dataset.n, dataset.X.shape[1]
    extra = {} if fixed is None else {"sigma_s": fixed.tolist()}
    if parameterization == "full":
        L = bbm_layout(p, n, fixed is not None)
        target, transform = _bbm_logp_grad, _transform(dataset, fixed is not None)
    else:
        L = collapsed_layout(p, n, fixed is not None)
        target, transform = _collapsed_logp_grad, _collapsed_transform(dataset, fixed, config.seed)
    draws = sample(
        target, L["dim"], config, args=args,
        names=_names(dataset, fixed is not None), transform=transform,
        init=init, model="bbm", fixed=extra,
    )
    draws.sampler_stats["parameterization"] = parameterization
    return draws


def params_from_draws(draws: PosteriorDraws, n: int, index=None) -> BbmParams:
    """Build :class:`BbmParams` from one draw (``index`` into pooled draws) or posterior means."""
    def get(name):
        if name in draws:
            x = draws.flat(name)
            return float(x[index]) if index is not None else float(x.mean())
        raise KeyError(name)

    if "mu_theta" in draws:
        bt = np.array([get("mu_theta")])
        bs = np.array([get("mu_sigma")])
    else:
        bt = np.array([get(nm) for nm in draws.group("beta_theta")])
        bs = np.array([get(nm) for nm in draws.group("beta_sigma")])
    if "sigma_s" in draws.fixed:
        ss = np.asarray(draws.fixed["sigma_s"], dtype=float)
    else:
        ss = np.array([get(f"sigma_s[{i + 1}]") for i in range(n)])
    theta = np.array([get(f"theta[{i + 1}]") for i in range(n)])
    sigma = np.array([get(f"sigma[{i + 1}]") for i in range(n)])
    return BbmParams(bt, bs, get("r_theta"), get("r_sigma"), get("rho1"), get("rho2"), ss, theta, sigma)
