"""Exact incremental/decremental SVM.

Every observed sample is kept and assigned to one of three sets according
to its coefficient ``alpha`` and margin gradient ``g = y f(x) - 1``:

* remainder ``R``: ``alpha == 0`` and ``g >= 0``
* support ``S``:   ``0 < alpha < C`` and ``g == 0``
* error ``E``:     ``alpha == C`` and ``g <= 0``

Inserting a sample grows its coefficient in steps.  Each step is as long as
possible without any sample changing set except the one event that limits
it; that sample is then moved and the step direction recomputed.  The step
direction comes from the inverse of the label-bordered kernel matrix over
the support set::

    [[0,   y_S^T],
     [y_S, Q_SS ]]        with  Q_ij = y_i y_j K(x_i, x_j)

which is updated by rank-one expansion and contraction as support vectors
come and go.  Removal (unlearning) runs the same machinery in reverse.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Model, Sample, UNSIGNED
from .errors import (
    DegeneracyError,
    InvalidParameterError,
    InvariantError,
    NonConvergenceError,
    NotFoundError,
    ShapeError,
)
from .kernel import KernelSpec, kernel_block

log = logging.getLogger(__name__)

EPS_KKT = 1e-6
KAPPA_MIN = 1e-12
PIVOT_MIN = 1e-12
TIE_TOL = 1e-12

REMAINDER, SUPPORT, ERROR, CANDIDATE = 0, 1, 2, 3
SET_NAMES = {REMAINDER: "R", SUPPORT: "S", ERROR: "E", CANDIDATE: "C"}


def classify_membership(alpha_i, g_i, C, eps=EPS_KKT) -> str:
    """Return ``"R"``, ``"S"`` or ``"E"`` for a KKT-consistent ``(alpha, g)`` pair."""
    if alpha_i < 0 or alpha_i > C:
        raise InvariantError(f"alpha={alpha_i} outside [0, {C}]")
    if alpha_i == 0:
        if g_i >= -eps:
            return "R"
    elif alpha_i == C:
        if g_i <= eps:
            return "E"
    elif abs(g_i) <= eps:
        return "S"
    raise InvariantError(f"(alpha={alpha_i}, g={g_i}) violates the KKT conditions for C={C}")


@dataclass
class SensitivityPair:
    """Per-unit-step sensitivities for a candidate coefficient change.

    ``beta[0]`` is the bias sensitivity and ``beta[1:]`` the support
    coefficients in border order.  ``margin[k]`` is the change of ``g_k`` for
    every stored sample ``k`` (near zero on the support set).
    """

    beta: np.ndarray
    margin: np.ndarray
    bias_only: bool = False


@dataclass
class StepEvent:
    step: float
    position: int  # storage position of the limiting sample
    kind: str  # "S->R", "S->E", "R->S", "E->S", "C->S", "C->E", "C->R", "C->0"


def bordered_inverse_single(y_k, q_kk) -> np.ndarray:
    """Inverse of ``[[0, y], [y, q]]`` for ``y = +-1``."""
    return np.array([[-q_kk, y_k], [y_k, 0.0]])


def expand_inverse(inverse_border, eta_k, q_kk, beta_k=None, kappa_min=KAPPA_MIN):
    """Grow the bordered inverse by one row and column.

    ``eta_k`` is the border column of the new support vector (its label
    followed by its ``Q`` entries against the current support set).
    """
    if beta_k is None:
        beta_k = -inverse_border @ eta_k
    kappa = q_kk + eta_k @ beta_k
    if not kappa > kappa_min:
        raise DegeneracyError(f"kappa={kappa:.3e} below {kappa_min:.0e}: sample is linearly dependent")
    m = inverse_border.shape[0]
    v = np.append(beta_k, 1.0)
    out = np.multiply.outer(v, v)
    out /= kappa
    out[:m, :m] += inverse_border
    return out


def shrink_inverse(inverse_border, k, pivot_min=PIVOT_MIN):
    """Remove row/column ``k`` (border position, ``k >= 1``) from the bordered inverse."""
    m = inverse_border.shape[0]
    if not 1 <= k < m:
        raise NotFoundError(f"border position {k} not in 1..{m - 1}")
    pivot = inverse_border[k, k]
    if abs(pivot) < pivot_min:
        raise DegeneracyError(f"pivot {pivot:.3e} below {pivot_min:.0e}")
    A = inverse_border
    out = np.empty((m - 1, m - 1))
    out[:k, :k] = A[:k, :k]
    out[:k, k:] = A[:k, k + 1:]
    out[k:, :k] = A[k + 1:, :k]
    out[k:, k:] = A[k + 1:, k + 1:]
    col = np.concatenate((A[:k, k], A[k + 1:, k]))
    update = np.multiply.outer(col, np.concatenate((A[k, :k], A[k, k + 1:])))
    update /= pivot
    out -= update
    return out


class IsvmState:
    """Lossless incremental SVM state.

    Samples are addressed by stable integer ids handed out by
    :meth:`learn_sample`.
    """

    def __init__(self, C: float, kernel: KernelSpec, eps_kkt: float = EPS_KKT,
                 kappa_min: float = KAPPA_MIN, capacity: int = 64):
        if not C > 0:
            raise InvalidParameterError(f"C must be positive, got {C}")
        self.C = float(C)
        self.kernel = kernel
        self.eps_kkt = eps_kkt
        self.kappa_min = kappa_min
        self.mu = 0.0
        self.n = 0
        self.dim = None
        self.next_id = 0
        self.support = []  # storage positions in border order
        self.inverse = np.zeros((0, 0))
        self.last_iterations = 0
        self.rebuilds = 0
        self._cap = 0
        self._alloc(capacity, dim=1)

    @property
    def support(self) -> list:
        return self._support

    @support.setter
    def support(self, positions):
        self._support = list(positions)
        self._S = None

    def _support_index(self) -> np.ndarray:
        """``support`` as an index array, rebuilt only after the set changes."""
        if self._S is None:
            self._S = np.array(self._support, dtype=np.int64)
        return self._S

    # storage -------------------------------------------------------------

    def _alloc(self, capacity, dim):
        X = np.zeros((capacity, dim))
        G = np.zeros((capacity, capacity))
        y = np.zeros(capacity)
        alpha = np.zeros(capacity)
        g = np.zeros(capacity)
        member = np.zeros(capacity, dtype=np.int8)
        ids = np.zeros(capacity, dtype=np.int64)
        if self._cap:
            n = self.n
            X[:n] = self._X[:n]
            G[:n, :n] = self._G[:n, :n]
            y[:n], alpha[:n], g[:n] = self._y[:n], self._alpha[:n], self._g[:n]
            member[:n], ids[:n] = self._member[:n], self._ids[:n]
        self._X, self._G, self._y, self._alpha, self._g = X, G, y, alpha, g
        self._member, self._ids = member, ids
        self._cap = capacity

    def _append(self, x, label) -> int:
        if self.dim is None:
            self.dim = x.shape[0]
            self.kernel = self.kernel.resolve(self.dim)
            self._X = np.zeros((self._cap, self.dim))
        if self.n == self._cap:
            self._alloc(2 * self._cap, self.dim)
        p = self.n
        self._X[p] = x
        self._y[p] = label
        self._alpha[p] = 0.0
        self._member[p] = CANDIDATE
        self._ids[p] = self.next_id
        self.next_id += 1
        self.n += 1
        row = kernel_block(self.kernel, self._X[: self.n], x)
        self._G[p, : self.n] = row
        self._G[: self.n, p] = row
        return p

    def _delete(self, p):
        n = self.n
        for arr in (self._X, self._y, self._alpha, self._g, self._member, self._ids):
            arr[p : n - 1] = arr[p + 1 : n]
        self._G[p : n - 1, :n] = self._G[p + 1 : n, :n]
        self._G[: n - 1, p : n - 1] = self._G[: n - 1, p + 1 : n]
        self.n -= 1
        self.support = [s - 1 if s > p else s for s in self.support]

    def position(self, sample_id) -> int:
        hit = np.flatnonzero(self._ids[: self.n] == sample_id)
        if hit.size == 0:
            raise NotFoundError(f"sample id {sample_id} is not stored")
        return int(hit[0])

    # views ---------------------------------------------------------------

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
        return self._G[: self.n, : self.n]

    def memberships(self) -> dict:
        return {int(i): SET_NAMES[int(m)] for i, m in zip(self.ids, self._member[: self.n])}

    def set_ids(self, name: str) -> list:
        code = {"R": REMAINDER, "S": SUPPORT, "E": ERROR}[name]
        if code == SUPPORT:
            return [int(self._ids[p]) for p in self.support]
        return [int(i) for i in self.ids[self._member[: self.n] == code]]

    def __len__(self):
        return self.n

    # core quantities -----------------------------------------------------

    def _fresh_gradient(self, positions=None) -> np.ndarray:
        n = self.n
        if positions is None:
            positions = np.arange(n)
        active = np.flatnonzero(self._alpha[:n] != 0)
        a = self._alpha[active] * self._y[active]
        f = self._G[np.ix_(positions, active)] @ a + self.mu
        return self._y[positions] * f - 1.0

    def margin_gradient(self, sample_id) -> float:
        p = self.position(sample_id)
        return float(self._fresh_gradient(np.array([p]))[0])

    def bordered_matrix(self) -> np.ndarray:
        S = np.asarray(self.support, dtype=np.int64)
        m = S.shape[0]
        out = np.zeros((m + 1, m + 1))
        ys = self._y[S]
        out[0, 1:] = ys
        out[1:, 0] = ys
        out[1:, 1:] = np.outer(ys, ys) * self._G[np.ix_(S, S)]
        return out

    def dual_objective(self) -> float:
        if self.n == 0:
            return 0.0
        active = np.flatnonzero(self._alpha[: self.n] != 0)
        a = self._alpha[active] * self._y[active]
        return float(self._alpha[active].sum() - 0.5 * a @ self._G[np.ix_(active, active)] @ a)

    def _border_column(self, p) -> np.ndarray:
        S = self._support_index()
        eta = np.empty(S.shape[0] + 1)
        eta[0] = self._y[p]
        # the gram is exactly symmetric, and a row gather is contiguous
        eta[1:] = self._y[p] * self._y[S] * self._G[p, S]
        return eta

    def sensitivities(self, p) -> SensitivityPair:
        """Sensitivities of bias, support coefficients and margins to ``alpha_p``."""
        n = self.n
        yc = self._y[p]
        if not self.support:
            beta = np.array([yc])
            return SensitivityPair(beta, self._y[:n] * yc, bias_only=True)
        S = self._support_index()
        beta = -self.inverse @ self._border_column(p)
        ws = self._y[S] * beta[1:]
        if 2 * len(S) > n:
            # scattering into a full weight vector beats gathering most of the gram
            w = np.zeros(n)
            w[S] = ws
            spread = w @ self._G[:n, :n]
        else:
            # the gram is exactly symmetric; gathering rows is far cheaper than columns
            spread = ws @ self._G[S, :n]
        margin = self._y[:n] * (yc * self._G[p, :n] + spread + beta[0])
        return SensitivityPair(beta, margin)

    # inverse maintenance -------------------------------------------------

    def _add_support(self, p) -> bool:
        q_pp = self._G[p, p]
        if not self.support:
            self.inverse = bordered_inverse_single(self._y[p], q_pp)
        else:
            try:
                self.inverse = expand_inverse(self.inverse, self._border_column(p), q_pp,
                                              kappa_min=self.kappa_min)
            except DegeneracyError:
                return False
        self._support.append(p)
        self._S = None
        self._member[p] = SUPPORT
        return True

    def _remove_support(self, p, new_member):
        k = self.support.index(p) + 1
        if len(self.support) == 1:
            self.inverse = np.zeros((0, 0))
        else:
            try:
                self.inverse = shrink_inverse(self.inverse, k)
            except DegeneracyError:
                self.inverse = None
        del self._support[k - 1]
        self._S = None
        if self.inverse is None:
            self._rebuild_inverse()
        self._member[p] = new_member

    def _rebuild_inverse(self):
        self.rebuilds += 1
        log.debug("rebuilding bordered inverse directly (|S|=%d)", len(self.support))
        self.inverse = np.linalg.inv(self.bordered_matrix()) if self.support else np.zeros((0, 0))

    def inverse_residual(self) -> float:
        """Frobenius norm of ``Q Q^-1 - I``; zero for an empty support set."""
        if not self.support:
            return 0.0
        m = len(self.support) + 1
        return float(np.linalg.norm(self.bordered_matrix() @ self.inverse - np.eye(m)))

    # bookkeeping ---------------------------------------------------------

    def max_increment(self, c, sens: SensitivityPair, direction=1, ignore=()) -> StepEvent:
        """Largest admissible step for candidate ``c`` and the event limiting it."""
        n = self.n
        C = self.C
        best = [np.inf, None, None]  # step, stable id, (position, kind)

        def offer(step, p, kind):
            step = max(float(step), 0.0)
            sid = self._ids[p]
            if step < best[0] - TIE_TOL or (abs(step - best[0]) <= TIE_TOL and sid < best[1]):
                best[:] = [step, sid, (p, kind)]

        member = self._member[:n]
        alpha = self._alpha[:n]
        g = self._g[:n]
        rate_g = direction * sens.margin
        learning = direction > 0

        if not sens.bias_only:
            S = self._support_index()
            rate = direction * sens.beta[1:]
            for moving, kind in ((rate > 0, "S->E"), (rate < 0, "S->R")):
                idx = S[moving]
                if idx.size:
                    room = C - alpha[idx] if kind == "S->E" else -alpha[idx]
                    steps = room / rate[moving]
                    if np.isfinite(steps).any():
                        i = _argmin_by_id(steps, self._ids[idx])
                        offer(steps[i], idx[i], kind)

        mask_r = (member == REMAINDER) & (rate_g < 0)
        mask_e = (member == ERROR) & (rate_g > 0)
        if ignore:
            ig = np.asarray(list(ignore))
            mask_r[ig] = False
            mask_e[ig] = False
        for mask, kind in ((mask_r, "R->S"), (mask_e, "E->S")):
            idx = np.flatnonzero(mask)
            if idx.size:
                steps = -g[idx] / rate_g[idx]
                i = _argmin_by_id(steps, self._ids[idx])
                offer(steps[i], idx[i], kind)

        if learning:
            if sens.bias_only:
                offer(-g[c] / rate_g[c], c, "C->R" if alpha[c] == 0 else "C->S")
            else:
                if sens.margin[c] > self.kappa_min:
                    offer(-g[c] / sens.margin[c], c, "C->S")
                offer(C - alpha[c], c, "C->E")
        elif not sens.bias_only:
            offer(alpha[c], c, "C->0")

        if best[2] is None:
            raise NonConvergenceError("no event bounds the step", self._diagnostics(c))
        return StepEvent(best[0], best[2][0], best[2][1])

    def _apply(self, c, sens: SensitivityPair, step, direction):
        n = self.n
        d = direction * step
        if sens.bias_only:
            self.mu += d * sens.beta[0]
        else:
            self._alpha[c] += d
            self.mu += d * sens.beta[0]
            self._alpha[self._support_index()] += d * sens.beta[1:]
        self._g[:n] += d * sens.margin

    def _adjust(self, c, direction):
        """Drive candidate ``c`` to a KKT-consistent set (or to zero when unlearning)."""
        guard = 10 * max(self.n, 1)
        ignore = set()
        for it in range(1, guard + 1):
            if direction > 0 and self._alpha[c] >= self.C:
                self._alpha[c] = self.C
                self._member[c] = ERROR
                return it - 1
            if direction < 0 and self._alpha[c] <= 0:
                self._alpha[c] = 0.0
                return it - 1
            sens = self.sensitivities(c)
            ev = self.max_increment(c, sens, direction, ignore)
            self._apply(c, sens, ev.step, direction)
            p, kind = ev.position, ev.kind
            if kind == "S->R":
                self._alpha[p] = 0.0
                self._remove_support(p, REMAINDER)
            elif kind == "S->E":
                self._alpha[p] = self.C
                self._remove_support(p, ERROR)
            elif kind in ("R->S", "E->S"):
                self._g[p] = 0.0
                if not self._add_support(p):
                    ignore.add(p)
            elif kind == "C->S":
                self._g[c] = 0.0
                self._add_support(c)
                return it
            elif kind == "C->E":
                self._alpha[c] = self.C
                self._member[c] = ERROR
                return it
            elif kind == "C->R":
                self._g[c] = 0.0
                self._member[c] = REMAINDER
                return it
            elif kind == "C->0":
                self._alpha[c] = 0.0
                return it
        raise NonConvergenceError(f"no convergence after {guard} bookkeeping steps",
                                  self._diagnostics(c))

    def _diagnostics(self, c):
        return {
            "candidate_id": int(self._ids[c]),
            "n": self.n,
            "support_ids": [int(self._ids[p]) for p in self.support],
            "mu": self.mu,
            "alpha_c": float(self._alpha[c]),
            "g_c": float(self._g[c]),
        }

    # public operations ---------------------------------------------------

    def learn_sample(self, x, label) -> int:
        """Insert one sample; returns its stable id."""
        x = np.ascontiguousarray(x, dtype=np.float64).ravel()
        if self.dim is not None and x.shape[0] != self.dim:
            raise ShapeError(f"expected {self.dim} features, got {x.shape[0]}")
        if label not in (1, -1):
            raise InvalidParameterError(f"label must be +1 or -1, got {label}")
        p = self._append(x, label)
        self._g[p] = self._fresh_gradient(np.array([p]))[0]
        if self._g[p] >= -self.eps_kkt:
            self._member[p] = REMAINDER
            self.last_iterations = 0
        else:
            self.last_iterations = self._adjust(p, +1)
        return int(self._ids[p])

    def unlearn_sample(self, sample_id):
        """Remove a stored sample, restoring the exact solution without it."""
        p = self.position(sample_id)
        member = self._member[p]
        if member == SUPPORT:
            self._remove_support(p, CANDIDATE)
        self._member[p] = CANDIDATE
        if self._alpha[p] > 0:
            self.last_iterations = self._adjust(p, -1)
        else:
            self.last_iterations = 0
        self._delete(p)

    def refresh_gradients(self):
        """Recompute every margin gradient from the coefficients."""
        self._g[: self.n] = self._fresh_gradient()

    def to_model(self) -> Model:
        active = np.flatnonzero(self.alpha > 0)
        return Model(self.kernel, self.X[active].copy(), self.y[active].astype(np.int64),
                     self.alpha[active].copy(), self.mu, self.C, UNSIGNED,
                     {"trainer": "isvm", "n_seen": int(self.next_id)})

    def kkt_violations(self, eps=None) -> list:
        """Human-readable list of invariant violations (empty when consistent)."""
        eps = self.eps_kkt if eps is None else eps
        out = []
        n = self.n
        if n == 0:
            return out
        balance = float(self.alpha @ self.y)
        if abs(balance) > 1e-8:
            out.append(f"sum(y*alpha) = {balance:.3e}")
        g = self._fresh_gradient()
        for p in range(n):
            a, gp, m = self._alpha[p], g[p], self._member[p]
            sid = int(self._ids[p])
            if not 0 <= a <= self.C:
                out.append(f"id {sid}: alpha {a} outside box")
                continue
            try:
                classify_membership(a, gp, self.C, eps)
            except InvariantError as exc:
                if not (m == SUPPORT and abs(gp) <= eps):
                    out.append(f"id {sid} ({SET_NAMES[int(m)]}): {exc}")
                    continue
            if m == SUPPORT and abs(gp) > eps:
                out.append(f"id {sid} in S with g={gp:.3e}")
            elif m == REMAINDER and a != 0:
                out.append(f"id {sid} in R with alpha={a}")
            elif m == ERROR and a != self.C:
                out.append(f"id {sid} in E with alpha={a}")
        return out


def _argmin_by_id(values, ids):
    """Index of the minimum value; near-ties go to the lowest id."""
    cand = np.flatnonzero(values <= values.min() + TIE_TOL)
    if cand.size == 1:
        return int(cand[0])
    return int(cand[np.argmin(ids[cand])])


def learn_sample(state: IsvmState, sample: Sample) -> IsvmState:
    state.learn_sample(sample.features, sample.label)
    return state


def unlearn_sample(state: IsvmState, sample_id: int) -> IsvmState:
    state.unlearn_sample(sample_id)
    return state


def train_isvm(X, y, C, kernel: KernelSpec) -> IsvmState:
    state = IsvmState(C, kernel)
    for xi, yi in zip(np.asarray(X), np.asarray(y)):
        state.learn_sample(xi, int(yi))
    return state
