"""Combine per-source estimates and their standard errors.

Classical pooled and regression estimators, the univariate and bivariate
hierarchical Bayesian models with a built-in no-U-turn sampler, posterior
predictive checks and a simulation-study harness.
"""

__version__ = "0.1.0"

from .bbm import BbmParams, bbm_log_posterior, bbm_shrinkage, fit_bbm, set_sigma_s_empirical
from .checking import PpcResult, discrepancy_T, ppc_pvalue
from .classical import (
    Estimate,
    WeightVector,
    linear_fit,
    raw_mean,
    trimmed_weighted_mean,
    weighted_mean,
)
from .data import Dataset, SourceObservation, from_arrays, load_csv, save_csv, validate
from .mcmc import DEFAULT_SEED, FitConfig, PosteriorDraws, sample
from .mcmc.io import read_draws, write_draws
from .simulation import ScenarioSpec, StudyMetrics, generate_dataset, run_study
from .ubm import UbmParams, fit_ubm, ubm_log_posterior

__all__ = [
    "BbmParams",
    "DEFAULT_SEED",
    "Dataset",
    "Estimate",
    "FitConfig",
    "PosteriorDraws",
    "PpcResult",
    "ScenarioSpec",
    "SourceObservation",
    "StudyMetrics",
    "UbmParams",
    "WeightVector",
    "__version__",
    "bbm_log_posterior",
    "bbm_shrinkage",
    "discrepancy_T",
    "fit_bbm",
    "fit_ubm",
    "from_arrays",
    "generate_dataset",
    "linear_fit",
    "load_csv",
    "ppc_pvalue",
    "raw_mean",
    "read_draws",
    "run_study",
    "sample",
    "save_csv",
    "set_sigma_s_empirical",
    "trimmed_weighted_mean",
    "ubm_log_posterior",
    "validate",
    "weighted_mean",
    "write_draws",
]
