"""Distribution primitives and constrained/unconstrained transforms.

Public functions validate their arguments and raise.  The ``*_unc`` kernels
at the bottom are numba-compiled, work on unconstrained coordinates, include
the transform Jacobian, return ``(value, derivative)`` and are what the model
log densities are assembled from; they never raise and yield ``-inf`` at
domain boundaries so that a sampler trajectory is rejected instead of aborted.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DomainViolation, InvalidCorrelation, InvalidScale, NegativeArgument

__all__ = [
    "normal_logpdf",
    "bivariate_normal_logpdf",
    "bivariate_normal_rvs",
    "half_cauchy_logpdf",
    "uniform_logpdf",
    "CholeskyCorr2",
    "lkj_cholesky_logpdf",
    "lkj_log_normalizer",
    "TransformKind",
    "ParamTransform",
]

LOG_2PI = math.log(2.0 * math.pi)


def normal_logpdf(x, mean, sd):
    """Log density of ``N(mean, sd**2)`` at ``x`` (broadcasts over arrays)."""
    sd = np.asarray(sd, dtype=float)
    if np.any(sd <= 0) or not np.all(np.isfinite(sd)):
        raise InvalidScale("sd must be positive and finite")
    z = (np.asarray(x, dtype=float) - mean) / sd
    out = -0.5 * LOG_2PI - np.log(sd) - 0.5 * z * z
    return float(out) if out.ndim == 0 else out


def _check_corr(rho):
    if not (-1.0 < rho < 1.0):
        raise InvalidCorrelation(f"correlation must lie in (-1, 1), got {rho}")


def bivariate_normal_logpdf(v, mean, sds, rho) -> float:
    """Log density of a bivariate normal given marginal sds and correlation."""
    _check_corr(rho)
    s1, s2 = (float(a) for a in sds)
    if not (s1 > 0 and s2 > 0):
        raise InvalidScale("sds must be positive")
    z1 = (v[0] - mean[0]) / s1
    z2 = (v[1] - mean[1]) / s2
    one_m = 1.0 - rho * rho
    quad = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / one_m
    return float(-LOG_2PI - math.log(s1) - math.log(s2) - 0.5 * math.log(one_m) - 0.5 * quad)


def bivariate_normal_rvs(rng: np.random.Generator, mean, sds, rho, size=None) -> np.ndarray:
    """Draw from a bivariate normal; per-row ``mean``/``sds``/``rho`` broadcast.

    Returns an array with a trailing axis of length 2.
    """
    mean = np.asarray(mean, dtype=float)
    sds = np.asarray(sds, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if size is None:
        size = np.broadcast_shapes(mean.shape[:-1], sds.shape[:-1], rho.shape)
    e1 = rng.standard_normal(size)
    e2 = rng.standard_normal(size)
    a = mean[..., 0] + sds[..., 0] * e1
    b = mean[..., 1] + sds[..., 1] * (rho * e1 + np.sqrt(1.0 - rho * rho) * e2)
    return np.stack([a, b], axis=-1)


def half_cauchy_logpdf(x, scale) -> float:
    """Log density ``log(2 / (pi * scale * (1 + (x/scale)**2)))`` for ``x >= 0``."""
    if scale <= 0:
        raise InvalidScale("scale must be positive")
    if x < 0:
        raise NegativeArgument(f"half-Cauchy argument must be >= 0, got {x}")
    r = x / scale
    return math.log(2.0 / (math.pi * scale)) - math.log1p(r * r)


def uniform_logpdf(x, low=-1.0, high=1.0) -> float:
    if low < x < high:
        return -math.log(high - low)
    return -math.inf


@dataclass(frozen=True)
class CholeskyCorr2:
    """Cholesky factor of a 2x2 correlation matrix, determined by ``rho``."""

    rho: float

    def __post_init__(self):
        _check_corr(self.rho)

    @property
    def L(self) -> np.ndarray:
        return np.array([[1.0, 0.0], [self.rho, math.sqrt(1.0 - self.rho**2)]])

    @property
    def corr(self) -> np.ndarray:
        L = self.L
        return L @ L.T


def lkj_log_normalizer(eta: float) -> float:
    """Log of the integral of ``(1 - rho**2)**(eta - 1)`` over ``(-1, 1)``."""
    return (2.0 * eta - 1.0) * math.log(2.0) + 2.0 * math.lgamma(eta) - math.lgamma(2.0 * eta)


def lkj_cholesky_logpdf(chol, eta: float) -> float:
    """LKJ(eta) log density for a 2x2 Cholesky factor, as a density over ``rho``.

    In two dimensions the LKJ law makes ``(rho + 1) / 2`` Beta(eta, eta)
    distributed; the value returned is normalised over ``rho`` in (-1, 1).
    """
    if eta <= 0:
        raise InvalidScale("eta must be positive")
    rho = chol.rho if isinstance(chol, CholeskyCorr2) else float(chol)
    _check_corr(rho)
    return (eta - 1.0) * math.log1p(-rho * rho) - lkj_log_normalizer(eta)


class TransformKind(str, enum.Enum):
    LOG_POSITIVE = "log_positive"
    TANH_INTERVAL = "tanh_interval"


@dataclass(frozen=True)
class ParamTransform:
    """Bijection between a constrained parameter and the real line.

    ``log_positive`` maps ``(0, inf)`` via ``exp``; ``tanh_interval`` maps
    ``(-1, 1)`` via ``tanh``.
    """

    kind: TransformKind

    def __post_init__(self):
        object.__setattr__(self, "kind", TransformKind(self.kind))

    def to_unconstrained(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is TransformKind.LOG_POSITIVE:
            if np.any(x <= 0):
                raise DomainViolation("log_positive parameter must be > 0")
            out = np.log(x)
        else:
            if np.any(np.abs(x) >= 1):
                raise DomainViolation("tanh_interval parameter must lie in (-1, 1)")
            out = np.arctanh(x)
        return float(out) if out.ndim == 0 else out

    def to_constrained(self, z):
        z = np.asarray(z, dtype=float)
        out = np.exp(z) if self.kind is TransformKind.LOG_POSITIVE else np.tanh(z)
        return float(out) if out.ndim == 0 else out

    def log_jacobian(self, z):
        """``log |d to_constrained / dz|``."""
        z = np.asarray(z, dtype=float)
        if self.kind is TransformKind.LOG_POSITIVE:
            out = z.copy()
        else:
            out = math.log(4.0) - 2.0 * np.logaddexp(z, -z)
        return float(out) if out.ndim == 0 else out


# --- compiled kernels on unconstrained coordinates --------------------------


@njit(cache=True, error_model="numpy")
def log_sech2(u):
    """``log(1 - tanh(u)**2)`` without cancellation."""
    a = abs(u)
    return math.log(4.0) - 2.0 * (a + math.log1p(math.exp(-2.0 * a)))


@njit(cache=True, error_model="numpy")
def half_cauchy_log_unc(z, scale):
    """Half-Cauchy(scale) on ``x = exp(z)`` plus the log Jacobian ``z``.

    Returns ``(value, d value / dz)``.
    """
    t = 2.0 * (z - math.log(scale))
    # log1p(exp(t)) and its derivative sigmoid(t), both overflow-safe
    if t > 0:
        softplus = t + math.log1p(math.exp(-t))
        sig = 1.0 / (1.0 + math.exp(-t))
    else:
        et = math.exp(t)
        softplus = math.log1p(et)
        sig = et / (1.0 + et)
    val = math.log(2.0 / (math.pi * scale)) - softplus + z
    return val, 1.0 - 2.0 * sig


@njit(cache=True, error_model="numpy")
def lkj2_log_unc(u, eta, log_norm):
    """LKJ(eta) for ``rho = tanh(u)`` plus the tanh Jacobian."""
    val = eta * log_sech2(u) - log_norm
    return val, -2.0 * eta * math.tanh(u)


@njit(cache=True, error_model="numpy")
def uniform_corr_log_unc(u):
    """Uniform(-1, 1) for ``rho = tanh(u)`` plus the tanh Jacobian."""
    return log_sech2(u) - math.log(2.0), -2.0 * math.tanh(u)
