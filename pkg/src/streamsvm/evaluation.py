"""Classification metrics, k-fold grid search and learning curves."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import Dataset, Model, decision_values, sign_of
from .errors import ConfigurationError, StreamSvmError, UndefinedMetricError
from .kernel import KernelSpec
from .lasvm import train_online
from .smo import SmoConfig, solve
from .trainers import TrainerConfig, fit

log = logging.getLogger(__name__)

PROB_CLIP = 1e-15


# -- metrics ------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    log_loss: float
    roc_auc: float
    f1: float

    def as_percent_row(self) -> dict:
        """Accuracy scaled by 100, the way result tables usually print it."""
        return {"accuracy": 100 * self.accuracy, "log_loss": self.log_loss,
                "roc_auc": self.roc_auc, "f1": self.f1}


def logistic(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-np.logaddexp(0.0, -z))


def accuracy(labels, predicted) -> float:
    return float(np.mean(np.asarray(labels) == np.asarray(predicted)))


def log_loss(labels, scores) -> float:
    """Cross-entropy of ``logistic(score)`` against ``labels == +1``."""
    p = np.clip(logistic(scores), PROB_CLIP, 1 - PROB_CLIP)
    t = (np.asarray(labels) > 0).astype(float)
    return float(-np.mean(t * np.log(p) + (1 - t) * np.log(1 - p)))


def roc_auc(labels, scores) -> float:
    """Probability that a random positive outranks a random negative (ties count half)."""
    labels = np.asarray(labels)
    pos = labels > 0
    n_pos = int(pos.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def f1_score(labels, predicted) -> float:
    labels = np.asarray(labels)
    predicted = np.asarray(predicted)
    tp = int(((predicted > 0) & (labels > 0)).sum())
    fp = int(((predicted > 0) & (labels < 0)).sum())
    fn = int(((predicted < 0) & (labels > 0)).sum())
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def metrics_from_scores(labels, scores, strict=True) -> MetricsReport:
    predicted = sign_of(scores)
    try:
        auc = roc_auc(labels, scores)
    except UndefinedMetricError as exc:
        if strict:
            exc.partial = MetricsReport(accuracy(labels, predicted), log_loss(labels, scores),
                                        math.nan, f1_score(labels, predicted))
            raise
        auc = math.nan
    return MetricsReport(accuracy(labels, predicted), log_loss(labels, scores), auc,
                         f1_score(labels, predicted))


def evaluate(model: Model, dataset: Dataset, strict=True) -> MetricsReport:
    """Accuracy, log-loss, ROC-AUC and F1 (positive class +1).

    Probabilities for log-loss are ``logistic(decision_value)``.  With
    ``strict`` a single-class dataset raises :class:`UndefinedMetricError`
    whose ``partial`` attribute holds the other metrics; otherwise ROC-AUC
    is NaN.
    """
    if len(dataset) == 0:
        raise ConfigurationError("cannot evaluate on an empty dataset")
    return metrics_from_scores(dataset.y, decision_values(model, dataset.X), strict)


# -- grid search --------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    C_values: tuple
    kernel_kinds: tuple
    gamma_values: tuple
    tau_values: tuple = (0.01,)
    folds: int = 5
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        for name in ("C_values", "kernel_kinds", "gamma_values", "tau_values"):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigurationError(f"{name} must not be empty")
            object.__setattr__(self, name, values)
        if self.folds < 2:
            raise ConfigurationError("folds must be >= 2")

    @classmethod
    def from_dict(cls, raw: dict) -> "GridSpec":
        known = {"C", "kernel", "gamma", "tau", "folds", "degree", "coef0"}
        extra = set(raw) - known - {"name", "description"}
        if extra:
            raise ConfigurationError(f"unknown grid keys {sorted(extra)}")
        return cls(tuple(float(c) for c in raw["C"]), tuple(raw["kernel"]),
                   tuple(g if g == "auto" else float(g) for g in raw["gamma"]),
                   tuple(float(t) for t in raw.get("tau", [0.01])),
                   int(raw.get("folds", 5)), int(raw.get("degree", 3)), float(raw.get("coef0", 0.0)))

    @classmethod
    def load(cls, path) -> "GridSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def configs(self, trainer_kind: str, seed: int = 0, **trainer_kw) -> List[TrainerConfig]:
        """Grid points in enumeration order: C, then kernel, then gamma, then tau."""
        taus = self.tau_values if trainer_kind == "lasvm" else (None,)
        out = []
        for C, kind, gamma, tau in itertools.product(self.C_values, self.kernel_kinds, self.gamma_values, taus):
            kernel = KernelSpec(kind, gamma, self.degree, self.coef0)
            kw = dict(trainer_kw)
            if tau is not None:
                kw["tau"] = tau
            out.append(TrainerConfig(trainer_kind, C, kernel, seed=seed, **kw))
        return out


@dataclass
class GridRow:
    config_id: int
    config: TrainerConfig
    fold_scores: list
    failed: bool = False
    error: str = ""

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_scores)) if not self.failed else math.nan

    @property
    def std(self) -> float:
        return float(np.std(self.fold_scores)) if not self.failed else math.nan


@dataclass
class GridResult:
    rows: List[GridRow]
    best: Optional[GridRow]


# Converging grid fits on the bundled grids need at most about 10 iterations
# per sample; ill-conditioned points (polynomial kernels on raw distances)
# stall for far longer, so they are cut off and reported as failed.
GRID_ITERATION_BUDGET = 20


def fold_indices(n: int, folds: int, seed: int) -> list:
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def _run_cell(args):
    config, train, valid = args
    try:
        model = fit(config, train)
        return accuracy(valid.y, sign_of(decision_values(model, valid.X))), ""
    except (StreamSvmError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


_SPLITS: list = []


def _set_splits(splits):
    global _SPLITS
    _SPLITS = splits


def _run_config(config, splits=None):
    """Fold scores for one grid point; stops at the first failing fold."""
    scores = []
    for train, valid in (_SPLITS if splits is None else splits):
        score, err = _run_cell((config, train, valid))
        if score is None:
            return scores, err
        scores.append(score)
    return scores, ""


def grid_search(dataset: Dataset, grid: GridSpec, trainer_kind: str, seed: int = 0,
                jobs: int = 1, **trainer_kw) -> GridResult:
    """k-fold cross-validated accuracy for every grid point.

    The best row is the highest mean validation accuracy; exact ties go to
    the earliest grid point.  Failed points are reported but never chosen.
    Fits run under ``GRID_ITERATION_BUDGET`` unless ``iteration_budget`` is
    given; a fit that exhausts it counts as a failed point.
    """
    if len(dataset) < grid.folds:
        raise ConfigurationError(f"{len(dataset)} samples cannot fill {grid.folds} folds")
    trainer_kw.setdefault("iteration_budget", GRID_ITERATION_BUDGET)
    configs = grid.configs(trainer_kind, seed, **trainer_kw)
    folds = fold_indices(len(dataset), grid.folds, seed)
    splits = []
    for k in range(grid.folds):
        train_idx = np.concatenate([folds[m] for m in range(grid.folds) if m != k])
        splits.append((dataset.subset(train_idx), dataset.subset(folds[k])))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_set_splits, initargs=(splits,)) as pool:
            outcomes = list(pool.map(_run_config, configs, chunksize=max(1, len(configs) // (4 * jobs))))
    else:
        outcomes = [_run_config(cfg, splits) for cfg in configs]

    rows = []
    for cid, (cfg, (scores, error)) in enumerate(zip(configs, outcomes)):
        if error:
            log.warning("grid point %d (%s) failed: %s", cid, cfg.kernel, error)
            rows.append(GridRow(cid, cfg, [], failed=True, error=error))
        else:
            rows.append(GridRow(cid, cfg, scores))
    best = None
    for row in rows:
        if not row.failed and (best is None or row.mean > best.mean):
            best = row
    return GridResult(rows, best)


GRID_HEADER = ["config_id", "C", "kernel", "gamma", "tau", "mean_val_acc", "std_val_acc"]
CURVE_HEADER = ["n_samples", "seconds", "val_acc", "test_acc", "sv_count"]


def grid_csv_rows(result: GridResult):
    for row in result.rows:
        cfg = row.config
        yield [row.config_id, repr(cfg.C), cfg.kernel.kind, str(cfg.kernel.gamma),
               repr(cfg.tau) if cfg.algo == "lasvm" else "", repr(row.mean), repr(row.std)]


def write_csv(path, header, rows):
    from .data import _atomic_write_text
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _atomic_write_text(path, buf.getvalue())


# -- learning curves ----------------------------------------------------------------


@dataclass(frozen=True)
class CurvePoint:
    n_samples_seen: int
    cumulative_train_seconds: float
    validation_accuracy: float
    test_accuracy: float
    support_set_size: int

    def csv_row(self):
        return [self.n_samples_seen, repr(self.cumulative_train_seconds),
                repr(self.validation_accuracy), repr(self.test_accuracy), self.support_set_size]


def _accuracy_on(model, dataset):
    if dataset is None or len(dataset) == 0:
        return math.nan
    return accuracy(dataset.y, sign_of(decision_values(model, dataset.X)))


def learning_curve(config: TrainerConfig, train: Dataset, validation: Optional[Dataset],
                   test: Optional[Dataset], checkpoints: Sequence[int]) -> List[CurvePoint]:
    """Snapshot accuracy and training time at increasing sample counts.

    Online trainers consume ``train`` once and are snapshotted in place.  The
    batch solver is retrained from scratch on the first ``n`` samples at each
    checkpoint, and its time is that retraining time.
    """
    checkpoints = [int(c) for c in checkpoints]
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ConfigurationError("checkpoints must be strictly increasing")
    if not checkpoints or checkpoints[0] < 1 or checkpoints[-1] > len(train):
        raise ConfigurationError(f"checkpoints must lie within 1..{len(train)}")
    clock = time.perf_counter
    points = []
    if config.algo == "smo":
        for c in checkpoints:
            t0 = clock()
            model = solve(train.subset(np.arange(c)), SmoConfig(config.C, config.kernel, config.smo_tolerance))
            elapsed = clock() - t0
            points.append(CurvePoint(c, elapsed, _accuracy_on(model, validation),
                                     _accuracy_on(model, test), model.n_support))
        return points

    state = config.new_state()
    elapsed = 0.0
    done = 0
    schedule = replace(config.schedule, passes=1)
    for c in checkpoints:
        t0 = clock()
        if config.algo == "isvm":
            for i in range(done, c):
                state.learn_sample(train.X[i], int(train.y[i]))
        else:
            train_online(state, train, schedule, start=done, stop=c)
        elapsed += clock() - t0
        done = c
        model = state.to_model()
        size = len(state.support) if config.algo == "isvm" else state.n
        points.append(CurvePoint(c, elapsed, _accuracy_on(model, validation), _accuracy_on(model, test), size))
    return points
