"""Leapfrog integration and the no-U-turn transition.

The transition is written as a single function using only numpy operations
and a call to the target, so the same source runs as plain Python (for any
callable target) and, compiled with numba, for numba-compiled targets.
Targets have the signature ``logp_grad(q, args) -> (logp, grad)``.

All randomness is supplied by the caller (momentum, per-doubling directions
and a pool of uniforms), which keeps the kernel a pure function of its inputs.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher

__all__ = [
    "leapfrog",
    "nuts_transition",
    "is_compiled",
    "uniforms_needed",
    "DIVERGENCE_THRESHOLD",
]

#: A trajectory is divergent once its energy error exceeds this value.
DIVERGENCE_THRESHOLD = 1000.0


def leapfrog(position, momentum, step_size, n_steps, logdensity_with_grad, inv_mass=None):
    """Integrate Hamiltonian dynamics with ``n_steps`` leapfrog steps.

    Parameters
    ----------
    position, momentum : array_like
    step_size : float
        Positive for forward integration.  Negative steps integrate backwards.
    n_steps : int
    logdensity_with_grad : callable
        ``f(q) -> (logp, grad)``.
    inv_mass : array_like, optional
        Diagonal of the inverse mass matrix (identity by default).

    Returns
    -------
    position, momentum : ndarray
        State after the final step.  Non-finite values are returned as
        produced; the caller decides whether to flag a divergence.
    """
    q = np.array(position, dtype=float)
    p = np.array(momentum, dtype=float)
    inv_mass = np.ones_like(q) if inv_mass is None else np.asarray(inv_mass, dtype=float)
    _, g = logdensity_with_grad(q)
    for _ in range(int(n_steps)):
        p = p + 0.5 * step_size * g
        q = q + step_size * inv_mass * p
        _, g = logdensity_with_grad(q)
        p = p + 0.5 * step_size * g
    return q, p


def uniforms_needed(max_depth: int) -> int:
    """Length of the uniform pool one transition may consume."""
    return (1 << max_depth) + max_depth


def _nuts_transition(
    logp_grad, args, q0, logp0, grad0, p0, inv_mass, step_size,
    max_depth, directions, uniforms, max_delta,
):
    """One multinomial no-U-turn transition.

    Returns ``(q, logp, grad, accept_stat, n_leapfrog, depth, divergent, energy)``.

    The trajectory doubles in a random direction until the U-turn criterion
    holds across the whole trajectory or any of its balanced sub-trees, a
    divergence occurs, or ``max_depth`` doublings are done.  Within a new
    sub-tree a state is chosen with probability proportional to its
    Boltzmann weight; the sub-tree's choice then replaces the current
    proposal with probability ``min(1, W_new / W_old)``.  U-turn checks of
    sub-trees are done with checkpointed momentum sums so that no recursion
    is needed.
    """
    dim = q0.shape[0]
    H0 = 0.5 * np.sum(inv_mass * p0 * p0) - logp0

    q_l = q0.copy()
    p_l = p0.copy()
    g_l = grad0.copy()
    q_r = q0.copy()
    p_r = p0.copy()
    g_r = grad0.copy()
    q_prop = q0.copy()
    lp_prop = logp0
    g_prop = grad0.copy()
    rho = p0.copy()
    log_w = 0.0

    sum_accept = 0.0
    n_leapfrog = 0
    depth = 0
    divergent = False
    ui = 0
    ck_p = np.zeros((max_depth + 1, dim))
    ck_rho = np.zeros((max_depth + 1, dim))

    while depth < max_depth:
        direction = directions[depth]
        eps = direction * step_size
        if direction > 0:
            q = q_r.copy()
            p = p_r.copy()
            g = g_r.copy()
        else:
            q = q_l.copy()
            p = p_l.copy()
            g = g_l.copy()

        sub_rho = np.zeros(dim)
        sub_log_w = -np.inf
        sub_q = q
        sub_lp = logp0
        sub_g = g
        valid = True
        for k in range(1 << depth):
            p = p + 0.5 * eps * g
            q = q + eps * inv_mass * p
            lp, g = logp_grad(q, args)
            p = p + 0.5 * eps * g
            n_leapfrog += 1

            H = 0.5 * np.sum(inv_mass * p * p) - lp
            if not math.isfinite(H):
                H = np.inf
            delta = H - H0
            if delta > max_delta:
                divergent = True
                valid = False
                break
            if delta <= 0.0:
                sum_accept += 1.0
            else:
                sum_accept += math.exp(-delta)

            new_log_w = np.logaddexp(sub_log_w, -delta)
            if math.log(uniforms[ui]) < -delta - new_log_w:
                sub_q = q
                sub_lp = lp
                sub_g = g
            ui += 1
            sub_log_w = new_log_w

            for m in range(1, depth + 1):
                if k % (1 << m) == 0:
                    ck_p[m] = p
                    ck_rho[m] = sub_rho
            sub_rho = sub_rho + p
            for m in range(1, depth + 1):
                if (k + 1) % (1 << m) == 0:
                    block = sub_rho - ck_rho[m]
                    if (np.sum(block * inv_mass * ck_p[m]) <= 0.0
                            or np.sum(block * inv_mass * p) <= 0.0):
                        valid = False
            if not valid:
                break
        if not valid:
            break

        if math.log(uniforms[ui]) < sub_log_w - log_w:
            q_prop = sub_q
            lp_prop = sub_lp
            g_prop = sub_g
        ui += 1
        log_w = np.logaddexp(log_w, sub_log_w)
        if direction > 0:
            q_r = q
            p_r = p
            g_r = g
        else:
            q_l = q
            p_l = p
            g_l = g
        rho = rho + sub_rho
        depth += 1
        if np.sum(rho * inv_mass * p_l) <= 0.0 or np.sum(rho * inv_mass * p_r) <= 0.0:
            break

    accept_stat = sum_accept / n_leapfrog if n_leapfrog > 0 else 0.0
    return q_prop, lp_prop, g_prop, accept_stat, n_leapfrog, depth, divergent, H0


_nuts_transition_jit = njit(_nuts_transition, error_model="numpy")


def is_compiled(fn) -> bool:
    """True when ``fn`` is a numba-compiled function usable inside the kernel."""
    return isinstance(fn, CPUDispatcher)


def nuts_transition(logp_grad, args, q0, logp0, grad0, p0, inv_mass, step_size,
                    max_depth, directions, uniforms, max_delta=DIVERGENCE_THRESHOLD):
    """Dispatch to the compiled kernel for compiled targets, else run in Python."""
    kernel = _nuts_transition_jit if is_compiled(logp_grad) else _nuts_transition
    return kernel(logp_grad, args, q0, float(logp0), grad0, p0, inv_mass, float(step_size),
                  int(max_depth), directions, uniforms, float(max_delta))
