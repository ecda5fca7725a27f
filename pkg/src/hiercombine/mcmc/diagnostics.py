"""Convergence diagnostics: split R-hat and effective sample size."""

from __future__ import annotations

import numpy as np

from ..errors import InsufficientDraws

__all__ = ["rhat", "ess", "split_chains", "autocovariance"]

#: Effective sample sizes are capped at this multiple of the draw count.
ESS_CAP_FACTOR = 1.5


def split_chains(draws) -> np.ndarray:
    """Split each chain in half; a middle draw of an odd-length chain is dropped."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[None, :]
    n = draws.shape[1]
    half = n // 2
    return np.concatenate([draws[:, :half], draws[:, n - half:]], axis=0)


def rhat(draws) -> float:
    """Classic split potential scale reduction factor for one parameter.

    Parameters
    ----------
    draws : array_like, shape (chains, draws)

    Returns
    -------
    float
        ``sqrt(var_plus / W)`` computed on half-chains, where ``W`` is the mean
        within-half variance and ``var_plus = (m-1)/m * W + B/m`` for
        half-chain length ``m``.  NaN when ``W`` is zero.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[0] < 2 or draws.shape[1] < 4:
        raise InsufficientDraws("rhat needs at least 2 chains with 4 draws each")
    halves = split_chains(draws)
    m = halves.shape[1]
    means = halves.mean(axis=1)
    W = halves.var(axis=1, ddof=1).mean()
    B = m * means.var(ddof=1)
    if not W > 0:
        return float("nan")
    var_plus = (m - 1) / m * W + B / m
    return float(np.sqrt(var_plus / W))


def autocovariance(x) -> np.ndarray:
    """Biased (divisor ``n``) autocovariance of a 1-D series, via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), size)
    return np.fft.irfft(f * np.conj(f), size)[:n] / n


def ess(draws) -> float:
    """Effective sample size from the initial positive sequence of autocorrelations.

    Chains are split in half, autocorrelations are combined across half-chains
    as in the multi-chain variance estimate used by R-hat, and the sum of
    paired autocorrelations is truncated at the first non-positive pair and
    made monotone.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[None, :]
    if draws.shape[1] < 8:
        raise InsufficientDraws("ess needs at least 8 draws per chain")
    halves = split_chains(draws)
    k, n = halves.shape
    acov = np.array([autocovariance(c) for c in halves])
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if k > 1:
        var_plus += halves.mean(axis=1).var(ddof=1)
    if not var_plus > 0:
        return float("nan")
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    pairs = []
    t = 0
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p <= 0:
            break
        pairs.append(p)
        t += 2
    pairs = np.minimum.accumulate(np.array(pairs)) if pairs else np.array([1.0])
    tau = -1.0 + 2.0 * pairs.sum()
    total = k * n
    tau = max(tau, 1.0 / ESS_CAP_FACTOR)
    return float(min(total / tau, ESS_CAP_FACTOR * total))
