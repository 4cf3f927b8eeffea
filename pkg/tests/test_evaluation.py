import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import blobs, logistic_log_loss, pairwise_auc
from streamsvm.core import Dataset, Model, decision_values, predict
from streamsvm.errors import ConfigurationError, UndefinedMetricError
from streamsvm.evaluation import (CURVE_HEADER, GRID_HEADER, GridSpec, accuracy, evaluate, f1_score,
                                  fold_indices, grid_csv_rows, grid_search, learning_curve, log_loss,
                                  metrics_from_scores, roc_auc, write_csv)
from streamsvm.kernel import KernelSpec
from streamsvm.trainers import TrainerConfig

GRIDS = __import__("pathlib").Path(__file__).resolve().parents[1] / "src" / "streamsvm" / "grids"
labels_st = arrays(np.int64, st.integers(2, 40), elements=st.sampled_from([-1, 1]))


def test_metric_examples():
    y = np.array([1, -1, 1, -1])
    report = metrics_from_scores(y, 5.0 * y)
    assert report.accuracy == 1.0 and report.f1 == 1.0
    assert log_loss([1], [0.0]) == pytest.approx(math.log(2), abs=1e-6)
    assert roc_auc([1, -1, 1], [0.9, 0.8, 0.3]) == 0.5


def test_f1_without_true_positives():
    assert f1_score([1, -1], [-1, -1]) == 0.0


def test_log_loss_clips_extreme_scores():
    assert math.isfinite(log_loss([1, -1], [-1e4, 1e4]))


@given(labels_st, st.data())
def test_auc_and_log_loss_match_pairwise_oracles(labels, data):
    scores = data.draw(arrays(float, labels.shape[0], elements=st.sampled_from([-2.0, -0.5, 0.0, 0.3, 1.5])))
    assert log_loss(labels, scores) == pytest.approx(logistic_log_loss(labels, scores), rel=1e-9)
    if len(set(labels.tolist())) == 2:
        assert roc_auc(labels, scores) == pytest.approx(pairwise_auc(labels, scores), abs=1e-12)


@given(labels_st, st.data())
def test_auc_invariant_under_increasing_transform(labels, data):
    if len(set(labels.tolist())) < 2:
        return
    # quarter steps keep the transformed values distinct in floating point
    scores = data.draw(arrays(float, labels.shape[0], elements=st.integers(-12, 12).map(lambda k: k / 4)))
    assert roc_auc(labels, scores) == roc_auc(labels, np.exp(2 * scores) + 7)


def test_against_sklearn_metrics():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(0)
    y = np.where(rng.random(200) < 0.4, 1, -1)
    s = rng.normal(size=200) + 0.8 * y
    r = metrics_from_scores(y, s)
    p = 1 / (1 + np.exp(-s))
    assert r.roc_auc == pytest.approx(metrics.roc_auc_score(y, s))
    assert r.log_loss == pytest.approx(metrics.log_loss(y > 0, p))
    assert r.f1 == pytest.approx(metrics.f1_score(y, np.where(s >= 0, 1, -1)))
    assert r.accuracy == pytest.approx(metrics.accuracy_score(y, np.where(s >= 0, 1, -1)))


def small_model():
    X, y = blobs(30, seed=1)
    return Model(KernelSpec("rbf", 1.0), X[:6], y[:6], np.full(6, 0.5), 0.1, 1.0), Dataset(X, y)


def test_evaluate_is_pure_and_agrees_with_predict():
    model, ds = small_model()
    a, b = evaluate(model, ds), evaluate(model, ds)
    assert a == b
    assert a.accuracy == np.mean([predict(model, x) == label for x, label in zip(ds.X, ds.y)])
    for value in (a.accuracy, a.f1, a.roc_auc):
        assert 0 <= value <= 1


def test_single_class_auc_is_undefined_but_rest_computed():
    model, ds = small_model()
    one = ds.subset(np.flatnonzero(ds.y == 1))
    with pytest.raises(UndefinedMetricError) as err:
        evaluate(model, one)
    assert 0 <= err.value.partial.accuracy <= 1
    assert math.isnan(evaluate(model, one, strict=False).roc_auc)


def test_grid_files_enumerate_expected_counts():
    full = GridSpec.load(GRIDS / "full.json")
    assert len(full.configs("isvm")) == 13 * 4 * 6 == 312
    assert len(full.configs("smo")) == 312
    assert len(full.configs("lasvm")) == 13 * 4 * 6 * 4 == 1248
    smoke = GridSpec.load(GRIDS / "smoke.json")
    assert len(smoke.configs("smo")) == 12


def test_enumeration_order_is_c_kernel_gamma_tau():
    grid = GridSpec((1.0, 2.0), ("rbf", "sigmoid"), ("auto", 0.1), (0.1, 0.01))
    keys = [(c.C, c.kernel.kind, c.kernel.gamma, c.tau) for c in grid.configs("lasvm")]
    assert keys == sorted(keys, key=lambda k: ((1.0, 2.0).index(k[0]), ("rbf", "sigmoid").index(k[1]),
                                               ("auto", 0.1).index(k[2]), (0.1, 0.01).index(k[3])))


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        GridSpec((), ("rbf",), ("auto",))
    with pytest.raises(ConfigurationError):
        GridSpec((1.0,), ("rbf",), ("auto",), folds=1)
    with pytest.raises(ConfigurationError):
        GridSpec.from_dict({"C": [1], "kernel": ["rbf"], "gamma": ["auto"], "colour": 1})


def test_fold_indices_partition():
    folds = fold_indices(23, 5, 3)
    assert sorted(np.concatenate(folds).tolist()) == list(range(23))
    assert [len(f) for f in folds] == [5, 5, 5, 4, 4]


def test_single_config_grid_returns_it():
    X, y = blobs(40, seed=2)
    result = grid_search(Dataset(X, y), GridSpec((1.0,), ("rbf",), (0.5,), folds=4), "smo")
    assert result.best is result.rows[0]
    assert len(result.best.fold_scores) == 4


def test_exact_ties_go_to_first_config():
    X, y = blobs(40, seed=2)
    # identical configs produce identical scores
    result = grid_search(Dataset(X, y), GridSpec((1.0, 1.0), ("rbf",), (0.5,), folds=3), "smo")
    assert result.rows[0].mean == result.rows[1].mean
    assert result.best.config_id == 0


def test_failed_configs_are_excluded():
    X, y = blobs(40, seed=2)  # negative features break the chi-square kernel
    result = grid_search(Dataset(X, y), GridSpec((1.0,), ("chi_square", "rbf"), (0.5,), folds=3), "lasvm")
    assert result.rows[0].failed and "DomainError" in result.rows[0].error
    assert result.best.config_id == 1


def test_grid_result_independent_of_dataset_order_given_folds():
    X, y = blobs(45, seed=5)
    grid = GridSpec((1.0, 10.0), ("rbf",), (0.5,), folds=3)
    base = grid_search(Dataset(X, y), grid, "smo", seed=1)
    folds = fold_indices(45, 3, 1)
    # shuffle rows inside each fold; assignment of samples to folds is unchanged
    rng = np.random.default_rng(0)
    perm = np.arange(45)
    for f in folds:
        perm[f] = rng.permutation(f)
    again = grid_search(Dataset(X[perm], y[perm]), grid, "smo", seed=1)
    assert [r.mean for r in base.rows] == pytest.approx([r.mean for r in again.rows], abs=1e-12)


def test_grid_csv(tmp_path):
    X, y = blobs(30, seed=3)
    result = grid_search(Dataset(X, y), GridSpec((1.0,), ("rbf",), ("auto",), folds=3), "isvm")
    path = tmp_path / "grid.csv"
    write_csv(path, GRID_HEADER, grid_csv_rows(result))
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["config_id", "C", "kernel", "gamma", "tau", "mean_val_acc", "std_val_acc"]
    assert rows[1][:5] == ["0", "1.0", "rbf", "auto", ""]


@pytest.mark.parametrize("algo", ["isvm", "lasvm", "smo"])
def test_learning_curve_points(algo, tmp_path):
    X, y = blobs(260, seed=4)
    ds = Dataset(X, y)
    train, valid, test = ds.subset(range(200)), ds.subset(range(200, 230)), ds.subset(range(230, 260))
    points = learning_curve(TrainerConfig(algo, 1.0, KernelSpec("rbf", 1.0)), train, valid, test, [100, 200])
    assert [p.n_samples_seen for p in points] == [100, 200]
    if algo != "smo":
        assert points[0].cumulative_train_seconds <= points[1].cumulative_train_seconds
    assert all(0 <= p.validation_accuracy <= 1 for p in points)
    write_csv(tmp_path / "c.csv", CURVE_HEADER, [p.csv_row() for p in points])
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "n_samples,seconds,val_acc,test_acc,sv_count"


def test_learning_curve_final_point_matches_full_fit():
    X, y = blobs(120, seed=6)
    ds = Dataset(X, y)
    config = TrainerConfig("isvm", 2.0, KernelSpec("rbf", 1.0))
    points = learning_curve(config, ds, ds, ds, [60, 120])
    from streamsvm.trainers import fit

    model = fit(config, ds)
    assert points[-1].validation_accuracy == accuracy(ds.y, np.where(decision_values(model, ds.X) >= 0, 1, -1))


@pytest.mark.parametrize("bad", [[200, 100], [0, 10], [10, 10_000]])
def test_learning_curve_checkpoint_validation(bad):
    X, y = blobs(50, seed=1)
    with pytest.raises(ConfigurationError):
        learning_curve(TrainerConfig("isvm"), Dataset(X, y), None, None, bad)


def test_iteration_budget_turns_slow_fits_into_failed_points():
    X, y = blobs(60, seed=7, shift=0.3)
    grid = GridSpec((100.0,), ("rbf",), (2.0,), folds=3)
    for algo in ("smo", "lasvm"):
        tight = grid_search(Dataset(X, y), grid, algo, iteration_budget=1)
        assert tight.rows[0].failed and "NonConvergenceError" in tight.rows[0].error
        assert tight.best is None


def test_default_budget_leaves_converging_fits_alone():
    X, y = blobs(60, seed=8)
    grid = GridSpec((1.0, 10.0), ("rbf",), (0.5,), (0.01, 0.001), folds=3)
    for algo in ("smo", "lasvm"):
        budgeted = grid_search(Dataset(X, y), grid, algo)
        unlimited = grid_search(Dataset(X, y), grid, algo, iteration_budget=None)
        assert not any(r.failed for r in budgeted.rows)
        assert [r.fold_scores for r in budgeted.rows] == [r.fold_scores for r in unlimited.rows]


def test_parallel_grid_matches_serial():
    X, y = np.abs(blobs(45, seed=10)[0]), blobs(45, seed=10)[1]
    X[0, 0] = -1.0  # chi-square fails on the fold holding this row in training
    grid = GridSpec((1.0, 10.0), ("rbf", "chi_square"), (0.5,), folds=3)
    serial = grid_search(Dataset(X, y), grid, "smo")
    parallel = grid_search(Dataset(X, y), grid, "smo", jobs=2)
    assert [(r.fold_scores, r.failed, r.error) for r in serial.rows] == \
        [(r.fold_scores, r.failed, r.error) for r in parallel.rows]
    assert [r.failed for r in serial.rows] == [False, True, False, True]
