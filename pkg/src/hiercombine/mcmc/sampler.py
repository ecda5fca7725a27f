"""Multi-chain no-U-turn sampling with warm-up adaptation.

Random numbers come from numpy's PCG64 generator.  Chain ``c`` of a run with
seed ``s`` uses ``SeedSequence(entropy=s, spawn_key=(c,))``, so chains are
independent streams and any chain can be reproduced in isolation.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import InitializationFailure, SamplerDiverged
from .adaptation import DualAveraging, Welford, adaptation_windows, regularized_variance
from .config import FitConfig
from .draws import PosteriorDraws
from .nuts import DIVERGENCE_THRESHOLD, is_compiled, nuts_transition, uniforms_needed

__all__ = ["sample", "chain_rng", "run_chain", "RNG_ALGORITHM"]

RNG_ALGORITHM = "numpy PCG64 via SeedSequence(entropy=seed, spawn_key=(chain,))"
INIT_RADIUS = 2.0
INIT_ATTEMPTS = 100


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(chain,))))


def _as_target(logdensity_with_grad, args):
    """Normalise a target to the ``f(q, args)`` convention."""
    if is_compiled(logdensity_with_grad):
        return logdensity_with_grad, args
    if args is None:
        fn = logdensity_with_grad
        return (lambda q, _a: fn(q)), ()
    return logdensity_with_grad, args


def _evaluate(target, args, q):
    lp, g = target(q, args)
    lp = float(lp)
    g = np.asarray(g, dtype=float)
    return lp, g


def _find_initial_point(target, args, dim, rng, init):
    if init is not None:
        q = np.array(init, dtype=float)
        lp, g = _evaluate(target, args, q)
        if math.isfinite(lp) and np.all(np.isfinite(g)):
            return q, lp, g
        raise InitializationFailure("log density is not finite at the supplied initial point")
    for _ in range(INIT_ATTEMPTS):
        q = rng.uniform(-INIT_RADIUS, INIT_RADIUS, size=dim)
        lp, g = _evaluate(target, args, q)
        if math.isfinite(lp) and np.all(np.isfinite(g)):
            return q, lp, g
    raise InitializationFailure(f"no finite starting point in {INIT_ATTEMPTS} attempts")


def _initial_step_size(target, args, q, lp, g, inv_mass, rng, step=1.0):
    """Double or halve the step until one leapfrog step's acceptance crosses 0.8."""
    def log_accept(eps):
        p = rng.standard_normal(q.size) / np.sqrt(inv_mass)
        H0 = 0.5 * np.sum(inv_mass * p * p) - lp
        with np.errstate(over="ignore", invalid="ignore"):
            p1 = p + 0.5 * eps * g
            q1 = q + eps * inv_mass * p1
            lp1, g1 = _evaluate(target, args, q1)
            p1 = p1 + 0.5 * eps * g1
            H1 = 0.5 * np.sum(inv_mass * p1 * p1) - lp1
        d = H0 - H1
        return d if math.isfinite(d) else -math.inf

    threshold = math.log(0.8)
    direction = 1 if log_accept(step) > threshold else -1
    for _ in range(100):
        step = step * (2.0 if direction > 0 else 0.5)
        la = log_accept(step)
        if direction > 0 and not la > threshold:
            step *= 0.5
            break
        if direction < 0 and la > threshold:
            break
        if step < 1e-12 or step > 1e7:
            break
    return step


def run_chain(target, args, dim: int, config: FitConfig, chain: int, init=None):
    """Run one chain; returns ``(retained_unconstrained_draws, stats)``."""
    rng = chain_rng(config.seed, chain)
    q, lp, g = _find_initial_point(target, args, dim, rng, init)
    inv_mass = np.ones(dim)
    step = _initial_step_size(target, args, q, lp, g, inv_mass, rng)
    adapter = DualAveraging(step, config.target_accept)

    window_ends, slow_start, slow_end = adaptation_windows(config.warmup)
    window_ends = set(window_ends)
    welford = Welford(dim)

    max_depth = config.max_tree_depth
    n_uniform = uniforms_needed(max_depth)
    keep = np.empty((config.retained_per_chain, dim))
    kept = 0
    accept_sum = 0.0
    depth_sum = 0
    leapfrog_sum = 0
    divergences = 0
    warmup_divergences = 0
    divergent_flags = np.zeros(config.iterations - config.warmup, dtype=bool)

    for it in range(config.iterations):
        warm = it < config.warmup
        p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
        directions = rng.integers(0, 2, size=max_depth) * 2 - 1
        uniforms = rng.random(n_uniform)
        q, lp, g, acc, n_leap, depth, divergent, _ = nuts_transition(
            target, args, q, lp, g, p0, inv_mass, step, max_depth,
            directions, uniforms, DIVERGENCE_THRESHOLD,
        )
        if warm:
            warmup_divergences += int(divergent)
            step = adapter.update(acc)
            if slow_start <= it < slow_end:
                welford.add(q)
            if it in window_ends:
                inv_mass = regularized_variance(welford.variance(), welford.n)
                welford = Welford(dim)
                step = _initial_step_size(target, args, q, lp, g, inv_mass, rng, step)
                adapter.restart(step)
            if it == config.warmup - 1:
                step = adapter.final()
        else:
            t = it - config.warmup
            divergences += int(divergent)
            divergent_flags[t] = divergent
            accept_sum += acc
            depth_sum += depth
            leapfrog_sum += n_leap
            if (t + 1) % config.thin == 0 and kept < keep.shape[0]:
                keep[kept] = q
                kept += 1
    if config.warmup == 0:
        step = adapter.step_size
    n_post = config.iterations - config.warmup
    stats = {
        "step_size": step,
        "mean_accept_stat": accept_sum / n_post,
        "mean_tree_depth": depth_sum / n_post,
        "mean_leapfrog": leapfrog_sum / n_post,
        "divergences": divergences,
        "warmup_divergences": warmup_divergences,
        "inv_mass": inv_mass.tolist(),
        "divergent": divergent_flags,
    }
    return keep, stats


def sample(logdensity_with_grad, dim: int, config: FitConfig | None = None, *, args=None,
           names=None, transform=None, init=None, model="custom", fixed=None,
           raise_on_all_divergent=True) -> PosteriorDraws:
    """Draw from a density on R^dim with the no-U-turn sampler.

    Parameters
    ----------
    logdensity_with_grad : callable
        ``f(q) -> (logp, grad)`` for plain Python callables.  Numba-compiled
        targets must use ``f(q, args)`` and are run by the compiled kernel.
        A Python callable together with ``args`` is also called as ``f(q, args)``.
    dim : int
    config : FitConfig, optional
    args : tuple, optional
        Extra data passed to the target.
    names : list of str, optional
        Names of the output columns; ``x[1]..x[dim]`` by default.
    transform : callable, optional
        Maps an ``(n, dim)`` array of unconstrained draws to the
        ``(n, len(names))`` array that is stored.
    init : array_like, optional
        Starting point used for every chain; otherwise uniform on (-2, 2).

    Raises
    ------
    InitializationFailure
        No finite starting point was found.
    SamplerDiverged
        Every post-warm-up transition of every chain diverged.
    """
    config = config or FitConfig()
    target, args = _as_target(logdensity_with_grad, args if args is not None else None)
    if args is None:
        args = ()
    per_chain = []
    stats = []
    for c in range(config.chains):
        draws, st = run_chain(target, args, dim, config, c, init)
        per_chain.append(draws)
        stats.append(st)
    raw = np.stack(per_chain)
    n_post = config.iterations - config.warmup
    divergences = np.array([s["divergences"] for s in stats])
    if raise_on_all_divergent and np.all(divergences == n_post):
        raise SamplerDiverged("every post-warm-up transition diverged")
    if transform is None:
        out = raw
        if names is None:
            names = [f"x[{i + 1}]" for i in range(dim)]
    else:
        flat = transform(raw.reshape(-1, dim))
        out = flat.reshape(raw.shape[0], raw.shape[1], -1)
    sampler_stats = {k: [s[k] for s in stats] for k in stats[0]}
    sampler_stats["rng"] = RNG_ALGORITHM
    return PosteriorDraws(
        parameter_names=list(names),
        draws=out,
        config=config,
        divergences=divergences,
        sampler_stats=sampler_stats,
        fixed=dict(fixed or {}),
        model=model,
    )
