"""Warm-up adaptation: dual-averaging step size and windowed diagonal mass matrix.

The warm-up schedule is an implementation constant: an initial fast phase of
75 iterations (step size only), a series of slow windows starting at 25
iterations and doubling, and a terminal fast phase of a fifth of the warm-up
(at least 50 iterations).  The long terminal phase lets the averaged step
size settle on the final mass matrix; with only 50 iterations the realised
acceptance rate overshoots the target by about 0.1.  Short warm-ups scale
the buffers to 15% / 10% of the warm-up length.
"""

from __future__ import annotations

import math

import numpy as np

INIT_BUFFER = 75
TERM_BUFFER = 50
TERM_FRACTION = 5
BASE_WINDOW = 25


class DualAveraging:
    """Nesterov dual averaging of ``log(step_size)`` towards a target acceptance."""

    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.step_size = step_size

    def update(self, accept_stat):
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        self.step_size = math.exp(x)
        return self.step_size

    def final(self):
        return math.exp(self.x_bar)


class Welford:
    """Running mean and variance of vectors."""

    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def variance(self):
        return self.m2 / (self.n - 1)


def adaptation_windows(warmup: int):
    """Return ``(window_ends, slow_start, slow_end)`` for a warm-up length.

    ``window_ends`` lists the iterations at which a slow window closes; it is
    empty when the warm-up is too short to adapt the mass matrix.
    """
    if warmup < 20:
        return [], warmup, warmup
    init, term, base = INIT_BUFFER, max(TERM_BUFFER, warmup // TERM_FRACTION), BASE_WINDOW
    if init + term + base > warmup:
        init = int(0.15 * warmup)
        term = int(0.1 * warmup)
        base = warmup - init - term
    ends = []
    start = init
    size = base
    slow_end = warmup - term
    while start < slow_end:
        end = start + size
        # fold a too-short final window into its predecessor
        if end + 2 * size > slow_end:
            end = slow_end
        ends.append(end - 1)
        start = end
        size *= 2
    return ends, init, slow_end


def regularized_variance(var, n):
    """Shrink a window's sample variance towards ``1e-3`` as Stan does."""
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
