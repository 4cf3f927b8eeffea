import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import blobs, qp_dual, rbf_gram
from streamsvm.core import Dataset, decision_values
from streamsvm.errors import InvalidParameterError, NonConvergenceError
from streamsvm.kernel import KernelSpec
from streamsvm.lasvm import (EpochSchedule, EventLog, LasvmState, direction_step, finish_due,
                             kkt_outsiders, stream_position, train_online)
from streamsvm.trainers import fit_lasvm_converged

FAR = np.array([[0.0, 0.0], [50.0, 0.0]])


def two_sample_state(tau=1e-3):
    s = LasvmState(100.0, tau, KernelSpec("rbf", 1.0))
    s.process(FAR[0], 1)
    s.process(FAR[1], -1)
    return s


def test_direction_step_examples():
    assert direction_step(1.0, 0.2, 1, 1, 0, 0.0, 0.0, 100, 1, -1) == pytest.approx(0.4)
    assert direction_step(1.0, 0.2, 1, 1, 0, 99.9, 0.0, 100, 1, -1) == pytest.approx(0.1)
    assert direction_step(0.5, 0.5, 1, 1, 0, 0.0, 0.0, 100, 1, -1) == 0.0


def test_zero_curvature_uses_box_only():
    assert direction_step(1.0, 0.0, 1, 1, 1, 0.0, 0.0, 3.0, 1, -1) == 3.0


def test_tau_violation_examples():
    s = LasvmState(100.0, 0.01, KernelSpec("rbf", 1.0))
    s.process(FAR[0], 1, sample_id=0)
    s.process(FAR[1], -1, sample_id=1)
    s.alpha[:] = 0.0
    s.g[:] = [0.5, 0.0]
    assert s.is_tau_violating(0, 1, 0.01)
    s.g[:] = [0.005, 0.0]
    assert not s.is_tau_violating(0, 1, 0.01)
    s.alpha[:] = [100.0, -100.0]
    s.g[:] = [5.0, 0.0]
    assert not s.is_tau_violating(0, 1, 0.01)


def test_first_candidate_enters_untouched():
    s = LasvmState(1.0, 0.01, KernelSpec("rbf", 1.0))
    s.process([1.0, 2.0], -1)
    assert s.alpha.tolist() == [0.0] and s.g.tolist() == [-1.0]


def test_two_sample_trace():
    s = two_sample_state()
    assert s.alpha.tolist() == [1.0, -1.0]
    assert s.g.tolist() == [0.0, 0.0]
    assert s.reprocess() == 0
    assert (s.b, s.delta) == (0.0, 0.0)
    assert s.finish() == 0
    assert s.alpha.tolist() == [1.0, -1.0]


def test_identical_candidate_is_ignored():
    s = two_sample_state()
    before = (s.alpha.copy(), s.g.copy(), s.n)
    assert not s.process(FAR[0].copy(), 1)
    assert np.array_equal(s.alpha, before[0]) and np.array_equal(s.g, before[1]) and s.n == before[2]


def test_reprocess_keeps_samples_inside_margin_bounds():
    s = LasvmState(100.0, 1.0, KernelSpec("rbf", 1.0))
    s.process(FAR[0], 1)
    s.process(FAR[1], -1)
    s.process([25.0, 0.0], 1)  # alpha stays 0 with g strictly between the extremes
    p = s.position(2)
    assert s.alpha[p] == 0.0
    s.reprocess(tau=10.0)
    assert 2 in s.ids


def test_pruned_samples_have_zero_coefficients():
    X, y = blobs(120, seed=4)
    s = LasvmState(10.0, 0.01, KernelSpec("rbf", 1.0))
    removed = []
    original = s._remove

    def checked_remove(positions):
        removed.extend(s.alpha[positions].tolist())
        original(positions)

    s._remove = checked_remove
    for i in range(len(y)):
        s.process(X[i], int(y[i]), sample_id=i)
        s.reprocess()
    assert removed and all(a == 0.0 for a in removed)


def test_finish_leaves_no_violating_pair():
    X, y = blobs(150, seed=2)
    s = LasvmState(5.0, 0.001, KernelSpec("rbf", 1.0))
    train_online(s, Dataset(X, y), EpochSchedule(epoch_size=50, epochs_before_finish=100))
    s.finish()
    assert s.max_violation() < 0.001
    for i in s.ids:
        for j in s.ids:
            assert not s.is_tau_violating(int(i), int(j))


def test_finish_is_noop_when_already_tight():
    s = two_sample_state()
    s.reprocess()
    assert s.finish(tau=0.5) == 0


def test_schedule_finish_count():
    X, y = blobs(1000, d=2, seed=1)
    log = EventLog()
    train_online(LasvmState(1.0, 0.01, KernelSpec("rbf", 1.0)), Dataset(X, y), EpochSchedule(200, 5), log=log)
    assert log.finishes == [1000]
    log = EventLog()
    train_online(LasvmState(1.0, 0.01, KernelSpec("rbf", 1.0)), Dataset(X[:150], y[:150]),
                 EpochSchedule(200, 5), log=log)
    assert log.finishes == [150]


def test_finish_due_arithmetic():
    sched = EpochSchedule(10, 2)
    due = [p for p in range(45) if finish_due(45, p, sched)]
    assert due == [19, 39, 44]


@given(st.integers(1, 400), st.integers(1, 60), st.integers(0, 3))
def test_stream_covers_every_index_once_per_pass(n, epoch_size, seed):
    sched = EpochSchedule(epoch_size, 1, seed, passes=2)
    first = [stream_position(n, p, sched) for p in range(n)]
    second = [stream_position(n, p, sched) for p in range(n, 2 * n)]
    assert sorted(first) == list(range(n)) == sorted(second)


def test_identical_runs_are_bitwise_equal():
    X, y = blobs(300, seed=3)
    ds = Dataset(X, y)
    runs = []
    for _ in range(2):
        s = LasvmState(10.0, 0.01, KernelSpec("rbf", 1.0))
        train_online(s, ds, EpochSchedule(100, 2, shuffle_seed=4))
        runs.append(s)
    assert np.array_equal(runs[0].alpha, runs[1].alpha) and np.array_equal(runs[0].ids, runs[1].ids)


@settings(max_examples=15)
@given(st.integers(2, 120), st.integers(0, 10**6), st.sampled_from([0.5, 10.0]), st.sampled_from([0.1, 0.001]))
def test_invariants_after_every_step(n, seed, C, tau):
    X, y = blobs(n, seed=seed)
    s = LasvmState(C, tau, KernelSpec("rbf", 1.0))
    for i in range(n):
        s.process(X[i], int(y[i]), sample_id=i)
        assert s.invariant_violations() == []
        s.reprocess()
        assert s.invariant_violations() == []


def test_converged_solution_matches_qp_oracle():
    X, y = blobs(40, d=2, seed=6)
    ds = Dataset(X, y)
    kernel = KernelSpec("rbf", 0.5)
    s = fit_lasvm_converged(ds, 10.0, 1e-5, kernel)
    s.finish(1e-5)
    assert kkt_outsiders(s, ds).size == 0
    K = rbf_gram(X, X, 0.5)
    a = qp_dual(K, y, 10.0)
    w = a * y
    free = (a > 1e-6) & (a < 10 - 1e-6)
    bias = np.mean(y[free] - K[free] @ w)
    reference = K @ w + bias
    assert np.abs(decision_values(s.to_model(), X) - reference).max() < 5e-3


def test_bad_parameters():
    with pytest.raises(InvalidParameterError):
        LasvmState(0.0, 0.1, KernelSpec())
    with pytest.raises(InvalidParameterError):
        LasvmState(1.0, 0.0, KernelSpec())
    with pytest.raises(InvalidParameterError):
        EpochSchedule(epoch_size=0)


def test_finish_step_cap():
    X, y = blobs(80, seed=9, shift=0.5)
    state = LasvmState(100.0, 1e-6, KernelSpec("rbf", 2.0))
    for k, (x, label) in enumerate(zip(X, y)):
        state.process(x, int(label), k)
    with pytest.raises(NonConvergenceError):
        state.finish(max_steps=1)
    state.finish(max_steps=10**5)
    assert state.delta <= 1e-6
    with pytest.raises(InvalidParameterError):
        EpochSchedule(finish_steps=0)
