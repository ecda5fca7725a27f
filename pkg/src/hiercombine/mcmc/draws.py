from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InsufficientDraws, MissingParameter
from .config import FitConfig
from .diagnostics import ess, rhat

__all__ = ["PosteriorDraws", "RHAT_THRESHOLD"]

#: Parameters with split R-hat above this value mark a fit as not converged.
RHAT_THRESHOLD = 1.05


@dataclass
class PosteriorDraws:
    """Retained posterior draws of named parameters.

    Attributes
    ----------
    parameter_names : list of str
    draws : ndarray, shape (chains, retained, n_parameters)
    config : FitConfig
        The configuration the draws were produced with (seed included).
    divergences : ndarray of int, shape (chains,)
        Divergent transitions after warm-up, per chain.
    sampler_stats : dict
        Per-chain step size, mean acceptance statistic, mean tree depth and
        warm-up divergences.
    fixed : dict
        Quantities held fixed during the fit (for example ``sigma`` set to the
        observed standard errors), keyed by parameter name.
    model : str
    """

    parameter_names: list
    draws: np.ndarray
    config: FitConfig
    divergences: np.ndarray
    sampler_stats: dict = field(default_factory=dict)
    fixed: dict = field(default_factory=dict)
    model: str = "custom"
    _diag: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.parameter_names = list(self.parameter_names)
        self.draws = np.asarray(self.draws, dtype=float)
        self.divergences = np.asarray(self.divergences, dtype=int)
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.parameter_names):
            raise ValueError("draws must have shape (chains, retained, len(parameter_names))")
        self._index = {n: i for i, n in enumerate(self.parameter_names)}

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0] * self.draws.shape[1]

    def __contains__(self, name) -> bool:
        return name in self._index

    def __getitem__(self, name) -> np.ndarray:
        """Draws of one parameter, shape ``(chains, retained)``."""
        try:
            return self.draws[:, :, self._index[name]]
        except KeyError:
            raise MissingParameter(name) from None

    def flat(self, name) -> np.ndarray:
        """Draws of one parameter pooled over chains in chain order."""
        return self[name].reshape(-1)

    def matrix(self, names) -> np.ndarray:
        """Pooled draws of several parameters, shape ``(n_draws, len(names))``."""
        return np.column_stack([self.flat(n) for n in names])

    def group(self, prefix) -> list[str]:
        """Names ``prefix[1]``, ``prefix[2]``, ... present in the draws, in order."""
        return [n for n in self.parameter_names if n.startswith(prefix + "[")]

    @property
    def diagnostics(self) -> dict:
        """Split R-hat and ESS per parameter (NaN where undefined)."""
        if self._diag is None:
            diag = {}
            for name in self.parameter_names:
                x = self[name]
                try:
                    r = rhat(x)
                except InsufficientDraws:
                    r = float("nan")
                try:
                    e = ess(x)
                except InsufficientDraws:
                    e = float("nan")
                diag[name] = {"rhat": r, "ess": e}
            self._diag = diag
        return self._diag

    @property
    def max_rhat(self) -> float:
        vals = [d["rhat"] for d in self.diagnostics.values() if np.isfinite(d["rhat"])]
        return max(vals) if vals else float("nan")

    @property
    def converged(self) -> bool:
        """False when any parameter's R-hat exceeds :data:`RHAT_THRESHOLD`."""
        return not self.max_rhat > RHAT_THRESHOLD

    def interval(self, name, level=0.95) -> tuple[float, float]:
        """Equal-tailed credible interval."""
        a = (1.0 - level) / 2.0
        lo, hi = np.quantile(self.flat(name), [a, 1.0 - a])
        return float(lo), float(hi)

    def mean(self, name) -> float:
        return float(self.flat(name).mean())

    def summary(self, level=0.95) -> dict:
        """Posterior mean, sd, equal-tailed interval, R-hat and ESS per parameter."""
        out = {}
        a = (1.0 - level) / 2.0
        for name in self.parameter_names:
            x = self.flat(name)
            lo, hi = np.quantile(x, [a, 1.0 - a])
            d = self.diagnostics[name]
            out[name] = {
                "mean": float(x.mean()),
                "sd": float(x.std(ddof=1)),
                "ci_low": float(lo),
                "ci_high": float(hi),
                "rhat": d["rhat"],
                "ess": d["ess"],
            }
        return out
