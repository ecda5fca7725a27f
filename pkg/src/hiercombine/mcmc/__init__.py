from .config import DEFAULT_PRIORS, DEFAULT_SEED, FitConfig
from .diagnostics import ess, rhat
from .draws import RHAT_THRESHOLD, PosteriorDraws
from .nuts import leapfrog, nuts_transition
from .sampler import sample

__all__ = [
    "DEFAULT_PRIORS",
    "DEFAULT_SEED",
    "FitConfig",
    "PosteriorDraws",
    "RHAT_THRESHOLD",
    "ess",
    "leapfrog",
    "nuts_transition",
    "rhat",
    "sample",
]
