"""Posterior predictive checking of the bivariate model.

The discrepancy is the sum of squared standardised residuals of ``y_i``
given ``log s_i`` and the parameters::

    T(Z, Psi) = sum_i (y_i - E[y_i | log s_i, Psi])^2 / Var(y_i | log s_i, Psi)

For every retained draw ``Psi_k`` a replicate ``(y_rep, log s_rep)`` is drawn
from the observation-level bivariate normal with the latent ``theta_i`` and
``sigma_i`` held at their values in ``Psi_k``.  ``T`` is evaluated on the
observed data with the observed ``log s`` and on the replicate with the
replicated ``log s``; the p-value is the fraction of draws where the
replicate is at least as extreme.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bbm import BbmParams
from .data import Dataset
from .errors import InvalidCorrelation, MissingParameter
from .mcmc import PosteriorDraws
from .rng import substream

__all__ = ["PpcResult", "discrepancy_T", "ppc_pvalue", "ppc_arrays"]


@dataclass(frozen=True)
class PpcResult:
    """Posterior predictive p-value with the per-draw statistics behind it."""

    p_value: float
    t_obs: np.ndarray
    t_rep: np.ndarray

    @property
    def n_draws(self) -> int:
        return int(self.t_obs.size)

    def to_dict(self) -> dict:
        return {"p_value": self.p_value, "n_draws": self.n_draws}


def _T(y, ls, theta, sigma, rho1, sigma_s):
    """Vectorised statistic; parameters broadcast against ``(draws, sources)``."""
    lsig = np.log(sigma)
    mean = theta + rho1 * sigma / sigma_s * (ls - lsig)
    var = sigma**2 * (1.0 - rho1**2)
    return np.sum((y - mean) ** 2 / var, axis=-1)


def discrepancy_T(dataset: Dataset, params: BbmParams) -> float:
    """``T`` for one parameter value.

    Raises
    ------
    InvalidCorrelation
        ``|rho1| >= 1`` (normally caught when ``params`` is built).
    """
    if not -1.0 < params.rho1 < 1.0:
        raise InvalidCorrelation("rho1 must lie in (-1, 1)")
    return float(_T(dataset.y, dataset.log_s, params.theta, params.sigma, params.rho1,
                    params.sigma_s))


def _require(draws: PosteriorDraws, names):
    for nm in names:
        if nm not in draws:
            raise MissingParameter(nm)


def ppc_arrays(draws: PosteriorDraws, n: int):
    """Pooled ``(theta, sigma, rho1, sigma_s)`` arrays, shapes ``(K, n)`` / ``(K, 1)``."""
    theta_names = [f"theta[{i + 1}]" for i in range(n)]
    sigma_names = [f"sigma[{i + 1}]" for i in range(n)]
    _require(draws, ["rho1", *theta_names, *sigma_names])
    theta = draws.matrix(theta_names)
    sigma = draws.matrix(sigma_names)
    rho1 = draws.flat("rho1")[:, None]
    if "sigma_s" in draws.fixed:
        ss = np.broadcast_to(np.asarray(draws.fixed["sigma_s"], dtype=float), (n,))[None, :]
    else:
        ss_names = [f"sigma_s[{i + 1}]" for i in range(n)]
        _require(draws, ss_names)
        ss = draws.matrix(ss_names)
    return theta, sigma, rho1, ss


def ppc_pvalue(dataset: Dataset, draws: PosteriorDraws, seed: int | None = None) -> PpcResult:
    """Posterior predictive p-value ``Pr(T(Z_rep) >= T(Z_obs) | Z_obs)``.

    Parameters
    ----------
    dataset : Dataset
        The data the draws were fitted to.
    draws : PosteriorDraws
        A bivariate-model fit; needs ``rho1``, ``theta[i]``, ``sigma[i]`` and
        ``sigma_s[i]`` (sampled or fixed).
    seed : int, optional
        Seed of the replication stream ``(seed, "ppc")``.  Defaults to the
        seed the draws were generated with.

    Raises
    ------
    MissingParameter
        A required column is absent.
    """
    n = dataset.n
    theta, sigma, rho1, ss = ppc_arrays(draws, n)
    seed = draws.config.seed if seed is None else seed
    rng = substream(seed, "ppc")
    K = theta.shape[0]
    e1 = rng.standard_normal((K, n))
    e2 = rng.standard_normal((K, n))
    lsig = np.log(sigma)
    y_rep = theta + sigma * e1
    ls_rep = lsig + ss * (rho1 * e1 + np.sqrt(1.0 - rho1**2) * e2)
    t_obs = _T(dataset.y[None, :], dataset.log_s[None, :], theta, sigma, rho1, ss)
    t_rep = _T(y_rep, ls_rep, theta, sigma, rho1, ss)
    p = float(np.mean(t_rep >= t_obs))
    return PpcResult(p_value=p, t_obs=t_obs, t_rep=t_rep)
