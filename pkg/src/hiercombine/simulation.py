"""Synthetic studies comparing the estimators.

Data are generated from the bivariate model: ``(theta_i, log sigma_i)`` from
the level-2 bivariate normal and ``(y_i, log s_i)`` from the level-1
bivariate normal.  Regression scenarios use the design
``[1, x1 ~ N(0, 1), x2 ~ Bernoulli(0.2)]``.  Every replicate has its own seed
derived from ``(study seed, scenario name, replicate index)`` so any one can
be rerun in isolation and results do not depend on execution order.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .bbm import fit_bbm
from .classical import (
    Estimate,
    WeightMode,
    linear_fit,
    raw_mean,
    trimmed_weighted_mean,
    weighted_mean,
)
from .data import Dataset, from_arrays
from .errors import HierCombineError, ValidationError
from .mcmc import FitConfig, PosteriorDraws
from .mcmc.config import DEFAULT_SEED
from .rng import stream_key, substream
from .ubm import fit_ubm

__all__ = [
    "ScenarioSpec",
    "Truth",
    "SimulatedData",
    "MetricRow",
    "ReplicateRecord",
    "StudyMetrics",
    "generate_dataset",
    "replicate_seed",
    "run_study",
    "theta_recovery_report",
    "scenario_catalogue",
    "POOLED_METHODS",
    "REGRESSION_METHODS",
]

POOLED_METHODS = ("raw", "weighted", "trimmed", "ubm", "bbm")
REGRESSION_METHODS = ("lr", "wlr", "twlr", "ubm", "bbm")
ALL_METHODS = ("raw", "weighted", "trimmed", "lr", "wlr", "twlr", "ubm", "bbm")

#: Generating coefficients of the regression scenarios (intercept, x1, x2).
DEFAULT_BETA_THETA = (5.0, 3.0, 1.0)
DEFAULT_BETA_SIGMA = (1.0, 1.0, 0.0)


@dataclass(frozen=True)
class ScenarioSpec:
    """Generating settings of one scenario.

    ``covariate_mode`` is ``"none"`` (targets ``mu_theta``) or ``"regression"``
    (targets every coefficient of ``beta_theta``, with ``beta_sigma`` the
    coefficients of ``log sigma``).
    """

    name: str = "scenario"
    n: int = 50
    mu_theta: float = 10.0
    mu_sigma: float = 2.0
    r_theta: float = 3.0
    r_sigma: float = 1.0
    sigma_s: float = 1.0
    rho1: float = 0.0
    rho2: float = 0.0
    covariate_mode: str = "none"
    beta_theta: tuple = DEFAULT_BETA_THETA
    beta_sigma: tuple = DEFAULT_BETA_SIGMA
    n_reps: int = 100
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if not (self.r_theta > 0 and self.r_sigma > 0 and self.sigma_s > 0):
            raise ValidationError("scales must be positive")
        if not (-1 < self.rho1 < 1 and -1 < self.rho2 < 1):
            raise ValidationError("correlations must lie in (-1, 1)")
        if self.n_reps < 1 or self.n < 1:
            raise ValidationError("n and n_reps must be positive")
        if self.covariate_mode not in ("none", "regression"):
            raise ValidationError(f"unknown covariate_mode {self.covariate_mode!r}")
        object.__setattr__(self, "beta_theta", tuple(float(b) for b in self.beta_theta))
        object.__setattr__(self, "beta_sigma", tuple(float(b) for b in self.beta_sigma))
        if self.regression and (len(self.beta_theta) != 3 or len(self.beta_sigma) != 3):
            raise ValidationError("regression scenarios take three coefficients each")

    @property
    def regression(self) -> bool:
        return self.covariate_mode == "regression"

    def targets(self) -> dict:
        """True value of every reported parameter."""
        if self.regression:
            return {f"beta[{j + 1}]": b for j, b in enumerate(self.beta_theta)}
        return {"mu": self.mu_theta}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Truth:
    """Generating values behind a simulated dataset."""

    theta: np.ndarray
    sigma: np.ndarray
    beta_theta: np.ndarray
    beta_sigma: np.ndarray
    targets: dict


@dataclass(frozen=True)
class SimulatedData:
    dataset: Dataset
    truth: Truth


def replicate_seed(seed: int, scenario: str, rep_index: int) -> int:
    """64-bit seed of one replicate, a hash of ``(seed, scenario, rep_index)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream_key(scenario), int(rep_index)))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def _draw(spec: ScenarioSpec, n: int, rng: np.random.Generator):
    if spec.regression:
        X = np.column_stack([np.ones(n), rng.standard_normal(n),
                             rng.binomial(1, 0.2, n).astype(float)])
        bt = np.array(spec.beta_theta)
        bs = np.array(spec.beta_sigma)
    else:
        X = np.ones((n, 1))
        bt = np.array([spec.mu_theta])
        bs = np.array([spec.mu_sigma])
    z1 = rng.standard_normal(n)
    z2 = rng.standard_normal(n)
    theta = X @ bt + spec.r_theta * z1
    log_sigma = X @ bs + spec.r_sigma * (spec.rho2 * z1 + math.sqrt(1 - spec.rho2**2) * z2)
    sigma = np.exp(log_sigma)
    e1 = rng.standard_normal(n)
    e2 = rng.standard_normal(n)
    y = theta + sigma * e1
    log_s = log_sigma + spec.sigma_s * (spec.rho1 * e1 + math.sqrt(1 - spec.rho1**2) * e2)
    return X, y, np.exp(log_s), theta, sigma, bt, bs


def generate_dataset(spec: ScenarioSpec, rep_index: int, n: int | None = None) -> SimulatedData:
    """Dataset of replicate ``rep_index`` and its truth record.

    ``n`` overrides ``spec.n`` (used for large-sample checks).
    """
    n = spec.n if n is None else int(n)
    rng = substream(replicate_seed(spec.seed, spec.name, rep_index), "data")
    X, y, s, theta, sigma, bt, bs = _draw(spec, n, rng)
    ids = [f"S{i + 1:04d}" for i in range(n)]
    ds = from_arrays(y, s, X if spec.regression else None, source_ids=ids)
    return SimulatedData(ds, Truth(theta, sigma, bt, bs, spec.targets()))


# --- estimation -------------------------------------------------------------------


@dataclass(frozen=True)
class _Est:
    point: float
    ci_low: float
    ci_high: float
    method: str
    parameter: str


def _as_rows(method: str, est) -> dict:
    """``{parameter: (point, ci_low, ci_high)}`` from classical or Bayesian results."""
    if isinstance(est, (Estimate, _Est)):
        est = [est]
    return {e.parameter: (float(e.point), float(e.ci_low), float(e.ci_high)) for e in est}


def _bayes(draws: PosteriorDraws, prefix_mu: str, prefix_beta: str, method: str, regression):
    if regression:
        names = draws.group(prefix_beta)
        return [_Est(draws.mean(nm), *draws.interval(nm), method, f"beta[{j + 1}]")
                for j, nm in enumerate(names)]
    return [_Est(draws.mean(prefix_mu), *draws.interval(prefix_mu), method, "mu")]


def estimate_methods(ds: Dataset, methods, fit_config: FitConfig | None, seed: int,
                     fix_sigma_s=None, bootstrap_B: int = 1000) -> dict:
    """Run each method on one dataset.

    Returns ``{method: {parameter: (point, lo, hi)} or exception}``.
    """
    out = {}
    for m in methods:
        try:
            if m == "raw":
                res = raw_mean(ds)
            elif m == "weighted":
                res = weighted_mean(ds)[0]
            elif m == "trimmed":
                res = trimmed_weighted_mean(ds, bootstrap_B=bootstrap_B, seed=seed)[0]
            elif m in ("lr", "wlr", "twlr"):
                mode = {"lr": WeightMode.UNWEIGHTED, "wlr": WeightMode.INVERSE_VARIANCE,
                        "twlr": WeightMode.TRIMMED}[m]
                res = linear_fit(ds, mode, bootstrap_B=bootstrap_B, seed=seed)[0]
            elif m == "ubm":
                d = fit_ubm(ds, fit_config.with_(seed=substream(seed, "ubm").integers(2**63)))
                res = _bayes(d, "mu", "beta", m, ds.has_covariates)
            elif m == "bbm":
                d = fit_bbm(ds, fit_config.with_(seed=substream(seed, "bbm").integers(2**63)),
                            fix_sigma_s=fix_sigma_s)
                res = _bayes(d, "mu_theta", "beta_theta", m, ds.has_covariates)
            else:
                raise ValidationError(f"unknown method {m!r}")
            out[m] = _as_rows(m, res)
        except HierCombineError as exc:
            out[m] = exc
    return out


# --- metrics ----------------------------------------------------------------------


@dataclass(frozen=True)
class MetricRow:
    scenario: str
    method: str
    parameter: str
    bias: float
    mse: float
    coverage: float
    n_reps: int
    failures: int

    @property
    def variance(self) -> float:
        """Empirical variance of the estimates, ``mse - bias^2``."""
        return self.mse - self.bias**2


@dataclass(frozen=True)
class ReplicateRecord:
    scenario: str
    method: str
    parameter: str
    rep: int
    estimate: float
    ci_low: float
    ci_high: float
    truth: float


METRIC_COLUMNS = ("scenario", "method", "parameter", "bias", "mse", "coverage", "n_reps",
                  "failures")
RECORD_COLUMNS = ("scenario", "method", "parameter", "rep", "estimate", "ci_low", "ci_high",
                  "truth")


@dataclass
class StudyMetrics:
    """Bias, MSE and coverage per ``(scenario, method, parameter)``.

    ``n_reps`` counts the replicates a method succeeded on; ``failures`` the
    ones where it raised.  ``records`` keeps every per-replicate estimate.
    """

    rows: list
    records: list = field(default_factory=list)

    def get(self, scenario: str, method: str, parameter: str) -> MetricRow:
        for r in self.rows:
            if (r.scenario, r.method, r.parameter) == (scenario, method, parameter):
                return r
        raise KeyError((scenario, method, parameter))

    def to_csv(self, path) -> None:
        _write_csv(path, METRIC_COLUMNS, [[getattr(r, c) for c in METRIC_COLUMNS] for r in self.rows])

    def records_to_csv(self, path) -> None:
        _write_csv(path, RECORD_COLUMNS,
                   [[getattr(r, c) for c in RECORD_COLUMNS] for r in self.records])

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows]}


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def summarize(records, failures: dict, scenarios, methods) -> list:
    """Aggregate replicate records into metric rows (order-independent)."""
    rows = []
    for spec in scenarios:
        for m in methods:
            for par, truth in spec.targets().items():
                recs = sorted((r for r in records
                               if (r.scenario, r.method, r.parameter) == (spec.name, m, par)),
                              key=lambda r: r.rep)
                fails = failures.get((spec.name, m), 0)
                if not recs:
                    rows.append(MetricRow(spec.name, m, par, math.nan, math.nan, math.nan, 0, fails))
                    continue
                err = np.array([r.estimate - truth for r in recs])
                cov = np.mean([r.ci_low <= truth <= r.ci_high for r in recs])
                rows.append(MetricRow(spec.name, m, par, float(err.mean()),
                                      float(np.mean(err**2)), float(cov), len(recs), fails))
    return rows


def _validate_methods(spec: ScenarioSpec, methods) -> list:
    allowed = REGRESSION_METHODS if spec.regression else POOLED_METHODS
    bad = [m for m in methods if m not in allowed and m not in _custom_names(methods)]
    if bad:
        raise ValidationError(
            f"methods {bad} do not apply to scenario {spec.name!r} ({spec.covariate_mode})")
    return list(methods)


def _custom_names(methods):
    return [m for m in methods if m not in ALL_METHODS]


def _run_replicate(job):
    spec, rep, methods, fit_config, fix_sigma_s, bootstrap_B, custom = job
    sim = generate_dataset(spec, rep)
    seed = replicate_seed(spec.seed, spec.name, rep)
    builtin = [m for m in methods if m in ALL_METHODS]
    res = estimate_methods(sim.dataset, builtin, fit_config, seed, fix_sigma_s, bootstrap_B)
    for name, fn in custom.items():
        try:
            res[name] = fn(sim.dataset, sim.truth, seed)
        except HierCombineError as exc:
            res[name] = exc
    records, failed = [], []
    for m in methods:
        r = res[m]
        if isinstance(r, Exception):
            failed.append(m)
            continue
        for par, truth in spec.targets().items():
            pt, lo, hi = r[par]
            records.append(ReplicateRecord(spec.name, m, par, rep, pt, lo, hi, truth))
    return records, failed, spec.name


def run_study(specs, methods, fit_config: FitConfig | None = None, *, fix_sigma_s=None,
              bootstrap_B: int = 1000, custom_methods: dict | None = None,
              workers: int = 1, reps=None, progress: Callable | None = None) -> StudyMetrics:
    """Simulate every scenario and score every method.

    Parameters
    ----------
    specs : sequence of ScenarioSpec
        Scenario names must be unique.
    methods : sequence of str
        Built-in names from ``raw, weighted, trimmed, lr, wlr, twlr, ubm, bbm``
        (pooled or regression names according to each scenario) plus any keys
        of ``custom_methods``.
    fit_config : FitConfig
        Chain settings of the Bayesian fits; each fit gets a seed derived from
        its replicate seed.  Required when ``ubm`` or ``bbm`` is requested.
    fix_sigma_s : None, "empirical" or float
        Passed to :func:`~hiercombine.bbm.fit_bbm`.
    custom_methods : dict, optional
        ``name -> f(dataset, truth, seed)`` returning
        ``{parameter: (point, ci_low, ci_high)}``.
    workers : int
        Replicates run in this many processes (results do not depend on it).
    reps : sequence of int, optional
        Replicate indices to run; ``range(spec.n_reps)`` by default.

    Returns
    -------
    StudyMetrics
        Failures of a method on a replicate are counted, not raised.
    """
    specs = list(specs)
    custom = dict(custom_methods or {})
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValidationError("scenario names must be unique")
    methods = list(methods)
    for m in methods:
        if m not in ALL_METHODS and m not in custom:
            raise ValidationError(f"unknown method {m!r}")
    if any(m in ("ubm", "bbm") for m in methods) and fit_config is None:
        raise ValidationError("Bayesian methods need a fit_config")
    jobs = []
    for spec in specs:
        _validate_methods(spec, methods)
        for rep in (range(spec.n_reps) if reps is None else reps):
            jobs.append((spec, rep, methods, fit_config, fix_sigma_s, bootstrap_B, custom))

    records, failures = [], {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = ex.map(_run_replicate, jobs)
            for k, res in enumerate(results):
                _collect(res, records, failures)
                if progress:
                    progress(k + 1, len(jobs))
    else:
        for k, job in enumerate(jobs):
            _collect(_run_replicate(job), records, failures)
            if progress:
                progress(k + 1, len(jobs))
    rows = summarize(records, failures, specs, methods)
    records.sort(key=lambda r: (names.index(r.scenario), methods.index(r.method), r.parameter,
                                r.rep))
    return StudyMetrics(rows, records)


def _collect(res, records, failures):
    recs, failed, scen = res
    records.extend(recs)
    for m in failed:
        failures[(scen, m)] = failures.get((scen, m), 0) + 1


# --- source-level recovery ---------------------------------------------------------


@dataclass(frozen=True)
class ThetaRow:
    source_id: str
    theta: float
    y: float
    y_low: float
    y_high: float
    ubm: float
    ubm_low: float
    ubm_high: float
    bbm: float
    bbm_low: float
    bbm_high: float

    @property
    def distance(self) -> float:
        return abs(self.y - self.theta)


THETA_COLUMNS = tuple(ThetaRow.__dataclass_fields__)


def theta_recovery_report(spec: ScenarioSpec, fit_config: FitConfig, rep_index: int = 0, *,
                          fix_sigma_s=None) -> list:
    """Per-source truth, direct estimate and both model estimates of ``theta_i``.

    Rows are sorted by ``|y_i - theta_i|`` in descending order.  Direct
    intervals are ``y_i +/- 1.96 s_i``; model intervals are equal-tailed 95%
    posterior intervals.
    """
    if spec.regression:
        raise ValidationError("theta recovery is defined for scenarios without covariates")
    sim = generate_dataset(spec, rep_index)
    ds = sim.dataset
    seed = replicate_seed(spec.seed, spec.name, rep_index)
    du = fit_ubm(ds, fit_config.with_(seed=substream(seed, "ubm").integers(2**63)))
    db = fit_bbm(ds, fit_config.with_(seed=substream(seed, "bbm").integers(2**63)),
                 fix_sigma_s=fix_sigma_s)
    rows = []
    for i, sid in enumerate(ds.source_ids):
        nm = f"theta[{i + 1}]"
        y, s = float(ds.y[i]), float(ds.s[i])
        rows.append(ThetaRow(sid, float(sim.truth.theta[i]), y, y - 1.959963984540054 * s,
                             y + 1.959963984540054 * s, du.mean(nm), *du.interval(nm),
                             db.mean(nm), *db.interval(nm)))
    rows.sort(key=lambda r: -r.distance)
    return rows


def theta_rows_to_csv(rows, path) -> None:
    _write_csv(path, THETA_COLUMNS, [[getattr(r, c) for c in THETA_COLUMNS] for r in rows])


# --- scenario catalogue ------------------------------------------------------------


def scenario_catalogue(n_reps: int = 100, seed: int = DEFAULT_SEED, rho: float = 0.7) -> dict:
    """The four correlation patterns, pooled and regression, plus the homogeneous setting."""
    out = {}
    patterns = {"r0": (0.0, 0.0), "r1": (rho, 0.0), "r2": (0.0, rho), "r12": (rho, rho)}
    for key, (r1, r2) in patterns.items():
        out[f"mean-{key}"] = ScenarioSpec(f"mean-{key}", rho1=r1, rho2=r2, n_reps=n_reps,
                                          seed=seed)
        out[f"reg-{key}"] = ScenarioSpec(f"reg-{key}", rho1=r1, rho2=r2, n_reps=n_reps,
                                         covariate_mode="regression", seed=seed)
        out[f"homog-{key}"] = ScenarioSpec(f"homog-{key}", mu_sigma=0.2, r_sigma=0.1, rho1=r1,
                                           rho2=r2, n_reps=n_reps, seed=seed)
    return out
