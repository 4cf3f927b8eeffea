"""Semi-online LASVM.

Coefficients are signed (``alpha_s = y_s * a_s`` with ``a_s`` in ``[0, C]``),
so every sample has the box ``[min(0, C y), max(0, C y)]`` and the equality
constraint reads ``sum(alpha) = 0``.  The gradient kept for each retained
sample is ``g_s = y_s - sum_k alpha_k K(x_k, x_s)``.

PROCESS inserts a candidate and takes one step along the best violating
pair that contains it; REPROCESS takes one step along the globally most
violating pair, then discards zero-coefficient samples that can no longer
take part in a violating pair.  The finishing step repeats REPROCESS until
the largest gradient gap falls below ``tau``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import Dataset, Model, SIGNED, decision_values
from .data import shuffle_epoch
from .errors import InvalidParameterError, NonConvergenceError, NotFoundError, ShapeError
from .kernel import KernelSpec, kernel_block

CURVATURE_FLOOR = 1e-12
FINISH_GUARD = 10**6


def direction_step(g_i, g_j, K_ii, K_jj, K_ij, alpha_i, alpha_j, C, y_i, y_j) -> float:
    """Step length along ``alpha_i += lam, alpha_j -= lam``."""
    curvature = K_ii + K_jj - 2.0 * K_ij
    newton = (g_i - g_j) / curvature if curvature > CURVATURE_FLOOR else np.inf
    lam = min(newton, max(0.0, C * y_i) - alpha_i, alpha_j - min(0.0, C * y_j))
    return max(float(lam), 0.0)


@dataclass(frozen=True)
class EpochSchedule:
    """``passes`` re-presents the whole stream; pruned samples may re-enter.

    ``finish_steps`` caps each finishing call (default ``FINISH_GUARD``).
    """

    epoch_size: int = 200
    epochs_before_finish: int = 5
    shuffle_seed: int = 0
    passes: int = 1
    finish_steps: int | None = None

    def __post_init__(self):
        if self.epoch_size < 1 or self.epochs_before_finish < 1 or self.passes < 1:
            raise InvalidParameterError("epoch_size, epochs_before_finish and passes must be >= 1")
        if self.finish_steps is not None and self.finish_steps < 1:
            raise InvalidParameterError("finish_steps must be >= 1")


@dataclass
class EventLog:
    positions: list = field(default_factory=list)
    sample_index: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    support_size: list = field(default_factory=list)
    finishes: list = field(default_factory=list)  # stream positions after which finish ran

    def record(self, position, index, seconds, support_size):
        self.positions.append(position)
        self.sample_index.append(index)
        self.seconds.append(seconds)
        self.support_size.append(support_size)


class LasvmState:
    def __init__(self, C: float, tau: float, kernel: KernelSpec, capacity: int = 64):
        if not C > 0:
            raise InvalidParameterError(f"C must be positive, got {C}")
        if not tau > 0:
            raise InvalidParameterError(f"tau must be positive, got {tau}")
        self.C = float(C)
        self.tau = float(tau)
        self.kernel = kernel
        self.b = 0.0
        self.delta = np.inf
        self.n = 0
        self.dim = None
        self.next_id = 0
        self.removed_total = 0
        self._cap = 0
        self._alloc(capacity, 1)

    def _alloc(self, capacity, dim):
        X = np.zeros((capacity, dim))
        K = np.zeros((capacity, capacity))
        y = np.zeros(capacity)
        hi = np.zeros(capacity)
        lo = np.zeros(capacity)
        alpha = np.zeros(capacity)
        g = np.zeros(capacity)
        ids = np.zeros(capacity, dtype=np.int64)
        if self._cap:
            n = self.n
            X[:n], K[:n, :n] = self._X[:n], self._K[:n, :n]
            y[:n], alpha[:n], g[:n], ids[:n] = self._y[:n], self._alpha[:n], self._g[:n], self._ids[:n]
            hi[:n], lo[:n] = self._hi[:n], self._lo[:n]
        self._X, self._K, self._y, self._alpha, self._g, self._ids = X, K, y, alpha, g, ids
        self._hi, self._lo = hi, lo  # box bounds per retained sample
        self._cap = capacity

    # views -------------------------------------------------------------------

    @property
    def X(self):
        return self._X[: self.n]

    @property
    def y(self):
        return self._y[: self.n]

    @property
    def alpha(self):
        return self._alpha[: self.n]

    @property
    def g(self):
        return self._g[: self.n]

    @property
    def ids(self):
        return self._ids[: self.n]

    @property
    def gram(self):
        return self._K[: self.n, : self.n]

    def __len__(self):
        return self.n

    def position(self, sample_id) -> int:
        hit = np.flatnonzero(self._ids[: self.n] == sample_id)
        if hit.size == 0:
            raise NotFoundError(f"sample id {sample_id} is not in the support set")
        return int(hit[0])

    def upper(self, p):
        return self._hi[p]

    def lower(self, p):
        return self._lo[p]

    def _eligible(self):
        n = self.n
        a = self._alpha[:n]
        return a < self._hi[:n], a > self._lo[:n]

    def fresh_gradient(self) -> np.ndarray:
        n = self.n
        return self._y[:n] - self._K[:n, :n] @ self._alpha[:n]

    # primitives ------------------------------------------------------------------

    def _violating(self, i, j, tau) -> bool:
        return (self._alpha[i] < self.upper(i) and self._alpha[j] > self.lower(j)
                and self._g[i] - self._g[j] > tau)

    def is_tau_violating(self, i_id, j_id, tau=None) -> bool:
        return self._violating(self.position(i_id), self.position(j_id), self.tau if tau is None else tau)

    def _step(self, i, j) -> float:
        n = self.n
        K = self._K
        lam = direction_step(self._g[i], self._g[j], K[i, i], K[j, j], K[i, j],
                             self._alpha[i], self._alpha[j], self.C, self._y[i], self._y[j])
        if lam <= 0:
            return 0.0
        room_i = self.upper(i) - self._alpha[i]
        room_j = self._alpha[j] - self.lower(j)
        self._alpha[i] += lam
        self._alpha[j] -= lam
        if lam == room_i:
            self._alpha[i] = self.upper(i)
        if lam == room_j:
            self._alpha[j] = self.lower(j)
        self._g[:n] -= lam * (K[i, :n] - K[j, :n])
        return lam

    def _extremes(self):
        """Positions of the max-gradient up-eligible and min-gradient down-eligible samples."""
        can_up, can_down = self._eligible()
        g = self._g[: self.n]
        # first index among ties, as argmax/argmin over the eligible subset would give
        i = int(np.argmax(np.where(can_up, g, -np.inf)))
        j = int(np.argmin(np.where(can_down, g, np.inf)))
        if not (can_up[i] and can_down[j]):
            return None, None
        return i, j

    def _insert(self, x, label, sample_id, k_row, k_self):
        if self.n == self._cap:
            self._alloc(2 * self._cap, self.dim)
        p = self.n
        self._X[p] = x
        self._y[p] = label
        self._hi[p] = max(0.0, self.C * label)
        self._lo[p] = min(0.0, self.C * label)
        self._alpha[p] = 0.0
        self._ids[p] = sample_id
        self._K[p, :p] = k_row
        self._K[:p, p] = k_row
        self._K[p, p] = k_self
        self._g[p] = label - k_row @ self._alpha[:p]
        self.n += 1
        return p

    def _remove(self, positions):
        # shift the tail left over each removed slot, highest first
        K = self._K
        for p in sorted({int(q) for q in np.atleast_1d(positions)}, reverse=True):
            n = self.n
            for arr in (self._X, self._y, self._hi, self._lo, self._alpha, self._g, self._ids):
                arr[p:n - 1] = arr[p + 1:n]
            K[p:n - 1, :n] = K[p + 1:n, :n]
            K[:n - 1, p:n - 1] = K[:n - 1, p + 1:n]
            self.n = n - 1

    # public operations -----------------------------------------------------------

    def process(self, x, label, sample_id=None) -> bool:
        """Insert a candidate; returns False when it was already present."""
        x = np.ascontiguousarray(x, dtype=np.float64).ravel()
        if label not in (1, -1):
            raise InvalidParameterError(f"label must be +1 or -1, got {label}")
        if self.dim is None:
            self.dim = x.shape[0]
            self.kernel = self.kernel.resolve(self.dim)
            self._X = np.zeros((self._cap, self.dim))
        elif x.shape[0] != self.dim:
            raise ShapeError(f"expected {self.dim} features, got {x.shape[0]}")
        if sample_id is None:
            sample_id = self.next_id
        self.next_id = max(self.next_id, int(sample_id) + 1)
        n = self.n
        if n:
            if (self._ids[:n] == sample_id).any():
                return False
            same = np.flatnonzero((self._y[:n] == label) & (self._X[:n] == x).all(axis=1))
            if same.size:
                return False
        k_row = kernel_block(self.kernel, self._X[:n], x)
        k_self = kernel_block(self.kernel, x, x)[0]
        c = self._insert(x, label, sample_id, k_row, k_self)

        can_up, can_down = self._eligible()
        can_up[c] = can_down[c] = False
        g = self._g[: self.n]
        if label > 0:
            pool = np.flatnonzero(can_down)
            if pool.size == 0:
                return True
            i, j = c, int(pool[np.argmin(g[pool])])
        else:
            pool = np.flatnonzero(can_up)
            if pool.size == 0:
                return True
            i, j = int(pool[np.argmax(g[pool])]), c
        if self._violating(i, j, self.tau):
            self._step(i, j)
        return True

    def reprocess(self, tau=None) -> int:
        """One step on the most violating pair, then prune; returns the removal count."""
        return self._reprocess(self.tau if tau is None else tau, self._extremes())[0]

    def _reprocess(self, tau, pair):
        """REPROCESS from a known extreme pair; also returns the pair after pruning, if known."""
        i, j = pair
        if i is None:
            return 0, None
        if self._violating(i, j, tau):
            self._step(i, j)
            i, j = self._extremes()
            if i is None:
                return 0, None
        g = self._g[: self.n]
        gi, gj = g[i], g[j]
        y, a = self._y[: self.n], self._alpha[: self.n]
        prune = np.flatnonzero((a == 0) & (((y < 0) & (g >= gi)) | ((y > 0) & (g <= gj))))
        self.b = float((gi + gj) / 2)
        self.delta = float(gi - gj)
        after = (i, j)
        if prune.size:
            self._remove(prune)
            self.removed_total += int(prune.size)
            # removal keeps order, so surviving extremes stay extreme at shifted positions
            if i in prune or j in prune:
                after = None
            else:
                below = np.searchsorted(prune, (i, j))
                after = (i - int(below[0]), j - int(below[1]))
        return int(prune.size), after

    def finish(self, tau=None, max_steps=None) -> int:
        """Repeat REPROCESS until the gradient gap is below ``tau``; returns iterations."""
        tau = self.tau if tau is None else tau
        if not tau > 0:
            raise InvalidParameterError("tau must be positive")
        limit = FINISH_GUARD if max_steps is None else int(max_steps)
        pair = None
        for it in range(limit):
            # delta == tau exactly admits no step, so stop there as well
            if self.delta < tau or (it and self.delta <= tau):
                return it
            if pair is None:
                pair = self._extremes()
            if pair[0] is None:
                return it
            pair = self._reprocess(tau, pair)[1]
        raise NonConvergenceError(f"finish did not reach delta < {tau} in {limit} steps",
                                  {"delta": self.delta, "support": self.n})

    def max_violation(self) -> float:
        """Largest ``g_i - g_j`` over eligible pairs (0 when no pair exists)."""
        i, j = self._extremes()
        if i is None:
            return 0.0
        return float(self._g[i] - self._g[j])

    def to_model(self) -> Model:
        nz = np.flatnonzero(self.alpha != 0)
        return Model(self.kernel, self.X[nz].copy(), self.y[nz].astype(np.int64), self.alpha[nz].copy(),
                     self.b, self.C, SIGNED, {"trainer": "lasvm", "support_set": int(self.n)})

    def invariant_violations(self, tol=1e-8) -> list:
        out = []
        if self.n == 0:
            return out
        a, y = self.alpha, self.y
        lo, hi = np.minimum(0.0, self.C * y), np.maximum(0.0, self.C * y)
        bad = np.flatnonzero((a < lo) | (a > hi))
        if bad.size:
            out.append(f"ids {self.ids[bad][:5].tolist()} outside their box")
        total = float(a.sum())
        if abs(total) > tol:
            out.append(f"sum(alpha) = {total:.3e}")
        drift = float(np.abs(self.fresh_gradient() - self.g).max())
        if drift > tol:
            out.append(f"gradient cache drift {drift:.3e}")
        return out


def process(state: LasvmState, sample, sample_id=None) -> LasvmState:
    state.process(sample.features, sample.label, sample_id)
    return state


def reprocess(state: LasvmState):
    removed = state.reprocess()
    return state, removed


def finish(state: LasvmState, tau: float) -> LasvmState:
    state.finish(tau)
    return state


@lru_cache(maxsize=64)
def _epoch_order(size: int, epoch: int, seed: int) -> np.ndarray:
    order = shuffle_epoch(size, epoch, seed)
    order.setflags(write=False)
    return order


def stream_position(n: int, position: int, schedule: EpochSchedule) -> int:
    """Dataset index consumed at stream ``position``."""
    pass_index, offset = divmod(position, n)
    per_pass = -(-n // schedule.epoch_size)
    epoch = pass_index * per_pass + offset // schedule.epoch_size
    start = offset - offset % schedule.epoch_size
    size = min(schedule.epoch_size, n - start)
    return start + int(_epoch_order(size, epoch, schedule.shuffle_seed)[offset - start])


def finish_due(n: int, position: int, schedule: EpochSchedule) -> bool:
    """Whether a finishing step follows the sample at stream ``position``."""
    done = position % n + 1
    return done == n or done % (schedule.epoch_size * schedule.epochs_before_finish) == 0


def stream_length(n: int, schedule: EpochSchedule) -> int:
    return n * schedule.passes


def kkt_outsiders(state: LasvmState, dataset: Dataset, tau=None) -> np.ndarray:
    """Indices of samples outside the support set that would form a violating pair.

    An empty result certifies that the retained solution is also optimal
    (to ``tau``) on the whole dataset.
    """
    tau = state.tau if tau is None else tau
    i, j = state._extremes()
    if i is None:
        return np.arange(len(dataset))
    g_up, g_down = state.g[i], state.g[j]
    model = state.to_model()
    g = dataset.y - (decision_values(model, dataset.X) - model.bias)
    inside = np.isin(np.arange(len(dataset)), state.ids)
    bad = ((dataset.y > 0) & (g - g_down > tau)) | ((dataset.y < 0) & (g_up - g > tau))
    return np.flatnonzero(bad & ~inside)


def train_online(state: LasvmState, stream: Dataset, schedule: EpochSchedule,
                 start: int = 0, stop: int | None = None, log: EventLog | None = None) -> EventLog:
    """Consume ``stream`` in seeded epoch order from ``start`` up to ``stop``.

    Each sample is processed and followed by one reprocess; the finishing
    step runs after every ``epochs_before_finish`` epochs and at the end of
    each pass over the stream.  Sample ids are dataset indices.
    """
    n = len(stream)
    if n == 0:
        raise InvalidParameterError("stream is empty")
    total = stream_length(n, schedule)
    stop = total if stop is None else min(stop, total)
    log = log if log is not None else EventLog()
    clock = time.perf_counter
    for pos in range(start, stop):
        idx = stream_position(n, pos, schedule)
        t0 = clock()
        state.process(stream.X[idx], int(stream.y[idx]), sample_id=idx)
        state.reprocess()
        if finish_due(n, pos, schedule):
            state.finish(max_steps=schedule.finish_steps)
            log.finishes.append(pos + 1)
        log.record(pos, idx, clock() - t0, state.n)
    return log
