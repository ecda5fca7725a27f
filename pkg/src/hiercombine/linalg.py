"""Weighted least-squares helpers shared by the estimators and closed forms."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from .errors import RankDeficientDesign

#: Relative tolerance on pivoted-QR diagonal entries for declaring rank deficiency.
RANK_TOL = 1e-10


def check_rank(X, w=None) -> None:
    """Raise :class:`RankDeficientDesign` unless ``sqrt(w) * X`` has full column rank."""
    A = np.asarray(X, dtype=float)
    if w is not None:
        A = A * np.sqrt(np.asarray(w, dtype=float))[:, None]
    if A.shape[0] < A.shape[1]:
        raise RankDeficientDesign(f"{A.shape[0]} rows for {A.shape[1]} coefficients")
    R = linalg.qr(A, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(R))
    if d.size == 0 or d[-1] <= RANK_TOL * d[0]:
        raise RankDeficientDesign("design matrix is rank deficient under the given weights")


def solve_weighted_normal_equations(X, y, w):
    """Return ``((X'WX)^-1 X'Wy, (X'WX)^-1)`` for diagonal weights ``w``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    check_rank(X, w)
    XtWX = X.T @ (w[:, None] * X)
    XtWy = X.T @ (w * y)
    cov = linalg.inv(XtWX)
    cov = 0.5 * (cov + cov.T)
    mean = linalg.solve(XtWX, XtWy, assume_a="pos")
    return mean, cov
