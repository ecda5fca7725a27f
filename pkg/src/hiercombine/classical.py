"""Non-Bayesian comparison estimators.

Pooled means (raw, inverse-variance weighted, trimmed-weight) and the matching
regressions (LR, WLR, TWLR).  Normal-theory intervals use the 97.5% standard
normal quantile; the trimmed variants use percentile bootstrap intervals
obtained by resampling whole sources, with the weights re-derived inside each
resample.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, validate
from .errors import EmptyDataset, NoVariance, RankDeficientDesign, ValidationError
from .linalg import check_rank, solve_weighted_normal_equations
from .mcmc.config import DEFAULT_SEED
from .rng import substream

__all__ = [
    "Method",
    "WeightMode",
    "Estimate",
    "WeightVector",
    "Z975",
    "raw_mean",
    "weighted_mean",
    "trimmed_weights",
    "trimmed_weighted_mean",
    "linear_fit",
]

#: 97.5% quantile of the standard normal.
Z975 = 1.959963984540054
MIN_BOOTSTRAP = 100


class Method(str, enum.Enum):
    RAW = "raw"
    WEIGHTED = "weighted"
    TRIMMED = "trimmed"
    LR = "lr"
    WLR = "wlr"
    TWLR = "twlr"


class WeightMode(str, enum.Enum):
    UNWEIGHTED = "unweighted"
    INVERSE_VARIANCE = "inverse_variance"
    TRIMMED = "trimmed"


_MODE_METHOD = {
    WeightMode.UNWEIGHTED: Method.LR,
    WeightMode.INVERSE_VARIANCE: Method.WLR,
    WeightMode.TRIMMED: Method.TWLR,
}


@dataclass(frozen=True)
class Estimate:
    """Point estimate with a 95% interval.

    ``parameter`` names the target (``mu`` for pooled means, ``beta[j]`` for
    regression coefficients, 1-based with the intercept first).
    """

    point: float
    ci_low: float
    ci_high: float
    method: Method
    se: float | None = None
    parameter: str = "mu"

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not self.ci_low <= self.point <= self.ci_high:
            raise ValidationError(
                f"interval ({self.ci_low}, {self.ci_high}) does not contain {self.point}")

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        return {"method": self.method.value, "parameter": self.parameter, "point": self.point,
                "ci_low": self.ci_low, "ci_high": self.ci_high, "se": self.se}


@dataclass(frozen=True)
class WeightVector:
    """Raw per-source weights and their standardised version ``lambda``."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValidationError("weights must be a non-empty vector of positive finite values")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def standardized(self) -> np.ndarray:
        return self.weights / self.weights.sum()


def _normal_estimate(point, se, method, parameter="mu") -> Estimate:
    half = Z975 * se
    return Estimate(float(point), float(point - half), float(point + half), method, float(se),
                    parameter)


def _percentile_estimate(point, boot, method, parameter="mu") -> Estimate:
    lo, hi = np.percentile(boot, [2.5, 97.5])
    # a percentile interval can miss the full-sample point in degenerate resamples
    lo, hi = min(lo, point), max(hi, point)
    return Estimate(float(point), float(lo), float(hi), method, float(np.std(boot, ddof=1)),
                    parameter)


def _nonempty(dataset: Dataset) -> None:
    if dataset.n == 0:
        raise EmptyDataset("dataset has no sources")
    validate(dataset, min_sources=1)


def raw_mean(dataset: Dataset) -> Estimate:
    """Arithmetic mean of ``y`` with interval ``mean +/- 1.96 sd(y) / sqrt(n)``.

    Raises
    ------
    EmptyDataset
        No sources.
    NoVariance
        A single source, for which no interval exists.
    """
    _nonempty(dataset)
    y = dataset.y
    if y.size < 2:
        raise NoVariance("an interval needs at least two sources")
    return _normal_estimate(y.mean(), y.std(ddof=1) / math.sqrt(y.size), Method.RAW)


def weighted_mean(dataset: Dataset) -> tuple[Estimate, WeightVector]:
    """Inverse-variance weighted mean with ``se = (sum 1/s^2)^(-1/2)``."""
    _nonempty(dataset)
    w = 1.0 / dataset.s**2
    total = w.sum()
    est = _normal_estimate(np.dot(w, dataset.y) / total, 1.0 / math.sqrt(total), Method.WEIGHTED)
    return est, WeightVector(w)


def trimmed_weights(s, trim_factor: float = 3.0) -> np.ndarray:
    """``min(1/s^2, trim_factor * mean(1/s^2))``, capped once.

    ``trim_factor=inf`` leaves the inverse-variance weights untouched.
    """
    if not trim_factor > 0:
        raise ValidationError("trim_factor must be positive")
    w = 1.0 / np.asarray(s, dtype=float) ** 2
    cap = trim_factor * w.mean(axis=-1, keepdims=True)
    return np.minimum(w, cap)


def _check_bootstrap(bootstrap_B: int) -> int:
    if int(bootstrap_B) < MIN_BOOTSTRAP:
        raise ValidationError(f"bootstrap_B must be at least {MIN_BOOTSTRAP}")
    return int(bootstrap_B)


def _resample_indices(n: int, B: int, seed: int, label: str) -> np.ndarray:
    return substream(seed, "bootstrap", label).integers(0, n, size=(B, n))


def trimmed_weighted_mean(dataset: Dataset, trim_factor: float = 3.0, bootstrap_B: int = 1000,
                          seed: int = DEFAULT_SEED) -> tuple[Estimate, WeightVector]:
    """Weighted mean with trimmed weights and a percentile bootstrap interval.

    Parameters
    ----------
    dataset : Dataset
    trim_factor : float
        Weights above ``trim_factor`` times the mean weight are set to that cap.
    bootstrap_B : int
        Number of source-level resamples (at least 100).
    seed : int
        Seeds the bootstrap stream; the interval is bit-reproducible.
    """
    _nonempty(dataset)
    B = _check_bootstrap(bootstrap_B)
    y, s = dataset.y, dataset.s
    w = trimmed_weights(s, trim_factor)
    point = np.dot(w, y) / w.sum()
    idx = _resample_indices(y.size, B, seed, "trimmed")
    wb = trimmed_weights(s[idx], trim_factor)
    boot = np.sum(wb * y[idx], axis=1) / wb.sum(axis=1)
    return _percentile_estimate(point, boot, Method.TRIMMED), WeightVector(w)


def _names(p: int) -> list[str]:
    return [f"beta[{j + 1}]" for j in range(p)]


def _wls(X, y, w):
    XtWX = X.T @ (w[:, None] * X)
    return np.linalg.solve(XtWX, X.T @ (w * y))


def linear_fit(dataset: Dataset, weight_mode: WeightMode | str = WeightMode.UNWEIGHTED, *,
               trim_factor: float = 3.0, bootstrap_B: int = 1000,
               seed: int = DEFAULT_SEED) -> tuple[list[Estimate], WeightVector]:
    """Least-squares regression of ``y`` on the covariates.

    ``unweighted`` gives LR, ``inverse_variance`` WLR (weights ``1/s^2``) and
    ``trimmed`` TWLR.  LR and WLR report normal-theory intervals with the
    usual residual-variance standard errors ``sqrt(diag(sigma2 (X'WX)^-1))``,
    ``sigma2 = sum w r^2 / (n - p)``; TWLR reports percentile bootstrap
    intervals over resampled sources.

    Raises
    ------
    ValidationError
        The dataset has no covariates, or too few sources for a residual variance.
    RankDeficientDesign
        ``X'WX`` is singular to the pivoted-QR tolerance.
    """
    mode = WeightMode(weight_mode)
    method = _MODE_METHOD[mode]
    validate(dataset, min_sources=1)
    if not dataset.has_covariates:
        raise ValidationError("linear_fit needs covariates")
    X, y, s = dataset.X, dataset.y, dataset.s
    n, p = X.shape
    if n <= p:
        raise RankDeficientDesign(f"{n} sources for {p} coefficients")
    if mode is WeightMode.UNWEIGHTED:
        w = np.ones(n)
    elif mode is WeightMode.INVERSE_VARIANCE:
        w = 1.0 / s**2
    else:
        w = trimmed_weights(s, trim_factor)
    coef, xtwx_inv = solve_weighted_normal_equations(X, y, w)
    names = _names(p)

    if mode is not WeightMode.TRIMMED:
        resid = y - X @ coef
        sigma2 = float(np.dot(w, resid**2) / (n - p))
        se = np.sqrt(sigma2 * np.diag(xtwx_inv))
        out = [_normal_estimate(c, e, method, nm) for c, e, nm in zip(coef, se, names)]
        return out, WeightVector(w)

    B = _check_bootstrap(bootstrap_B)
    idx = _resample_indices(n, B, seed, "twlr")
    boot = np.full((B, p), np.nan)
    for b in range(B):
        Xb, yb, sb = X[idx[b]], y[idx[b]], s[idx[b]]
        wb = trimmed_weights(sb, trim_factor)
        try:
            check_rank(Xb, wb)
        except RankDeficientDesign:
            continue
        boot[b] = _wls(Xb, yb, wb)
    ok = ~np.isnan(boot[:, 0])
    if ok.sum() < MIN_BOOTSTRAP:
        raise RankDeficientDesign("too many bootstrap resamples have a singular design")
    out = [_percentile_estimate(coef[j], boot[ok, j], method, names[j]) for j in range(p)]
    return out, WeightVector(w)
