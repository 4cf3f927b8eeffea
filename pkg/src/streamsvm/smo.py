"""Pairwise SMO for the standard C-SVM dual.

Solves ``min 1/2 a^T Q a - e^T a`` subject to ``y^T a = 0`` and
``0 <= a_i <= C`` with ``Q_ij = y_i y_j K_ij``, always moving the maximal
violating pair.  Kept deliberately simple: it is the reference the online
solvers are checked against, and the offline baseline in benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, Model, UNSIGNED
from .errors import DataError, InvalidParameterError
from .kernel import KernelCache, KernelSpec, kernel_row

CURVATURE_FLOOR = 1e-12


@dataclass(frozen=True)
class SmoConfig:
    C: float = 1.0
    kernel: KernelSpec = KernelSpec()
    tolerance: float = 1e-3
    max_passes: int = 1000
    cache_bytes: int = 256 * 2**20

    def __post_init__(self):
        if not self.C > 0:
            raise InvalidParameterError(f"C must be positive, got {self.C}")
        if not self.tolerance > 0:
            raise InvalidParameterError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_passes < 1:
            raise InvalidParameterError("max_passes must be >= 1")


def solve(dataset: Dataset, config: SmoConfig) -> Model:
    n = len(dataset)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    X, y = dataset.X, dataset.y.astype(np.float64)
    C = float(config.C)
    kernel = config.kernel.resolve(dataset.feature_dim)

    if np.all(y == y[0]):
        return Model(kernel, np.empty((0, dataset.feature_dim)), [], [], float(y[0]), C, UNSIGNED,
                     {"trainer": "smo", "converged": True, "iterations": 0, "degenerate": True})

    cache = KernelCache(config.cache_bytes)
    keys = np.arange(n)

    def row(i):
        return kernel_row(kernel, X[i], X, cache, row_key=i, col_keys=keys)

    alpha = np.zeros(n)
    grad = -np.ones(n)  # Q alpha - e
    pos, neg = y > 0, y < 0
    max_iter = config.max_passes * n
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        score = -y * grad
        up = (pos & (alpha < C)) | (neg & (alpha > 0))
        low = (neg & (alpha < C)) | (pos & (alpha > 0))
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        j = int(np.flatnonzero(low)[np.argmin(score[low])])
        gap = score[i] - score[j]
        if gap < config.tolerance:
            converged = True
            break
        Ki, Kj = row(i), row(j)
        curv = Ki[i] + Kj[j] - 2.0 * Ki[j]
        t = gap / max(curv, CURVATURE_FLOOR)
        room_i = C - alpha[i] if y[i] > 0 else alpha[i]
        room_j = alpha[j] if y[j] > 0 else C - alpha[j]
        t = min(t, room_i, room_j)
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        # pin coefficients that reached a bound exactly
        if t == room_i:
            alpha[i] = C if y[i] > 0 else 0.0
        if t == room_j:
            alpha[j] = 0.0 if y[j] > 0 else C
        grad += t * y * (Ki - Kj)

    bias = -_rho(alpha, grad, y, C)
    sv = np.flatnonzero(alpha > 0)
    meta = {"trainer": "smo", "converged": converged, "iterations": it,
            "cache_hits": cache.hits, "cache_misses": cache.misses}
    return Model(kernel, X[sv].copy(), dataset.y[sv], alpha[sv].copy(), bias, C, UNSIGNED, meta)


def _rho(alpha, grad, y, C):
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yg[free].mean())
    # bias interval from bounded variables; take its midpoint
    at_upper = alpha >= C
    at_lower = alpha <= 0
    ub_mask = ((y > 0) & at_lower) | ((y < 0) & at_upper)
    lb_mask = ((y > 0) & at_upper) | ((y < 0) & at_lower)
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    if np.isfinite(ub) and np.isfinite(lb):
        return float((ub + lb) / 2)
    return float(ub if np.isfinite(ub) else lb)
