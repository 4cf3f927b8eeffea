import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import blobs, dual_value, poly_gram, qp_dual, rbf_gram
from streamsvm.core import Dataset, decision_values, model_dual_objective
from streamsvm.errors import DegeneracyError, InvariantError, NotFoundError
from streamsvm.isvm import (IsvmState, bordered_inverse_single, classify_membership, expand_inverse,
                            shrink_inverse, train_isvm)
from streamsvm.kernel import KernelSpec
from streamsvm.smo import SmoConfig, solve

FAR = np.array([[0.0, 0.0], [50.0, 0.0], [0.0, 50.0], [50.0, 50.0]])  # rbf(gamma=1) cross terms are 0


def test_classify_membership_examples():
    assert classify_membership(0, 0.3, 100) == "R"
    assert classify_membership(42.0, 0.0, 100) == "S"
    assert classify_membership(100, -0.7, 100) == "E"
    with pytest.raises(InvariantError):
        classify_membership(0, -0.5, 100)
    with pytest.raises(InvariantError):
        classify_membership(50, 0.2, 100)


def test_single_border_inverse_and_sensitivity():
    inv = bordered_inverse_single(1, 1.0)
    assert inv.tolist() == [[-1.0, 1.0], [1.0, 0.0]]
    beta = -inv @ np.array([1.0, 0.2])
    assert beta.tolist() == pytest.approx([0.8, -1.0])
    # the first row keeps sum(y * alpha) fixed: y_s * d_alpha_s = -y_c
    assert 1 * beta[1] == -1


def random_border(m, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, 3))
    y = np.where(rng.random(m) < 0.5, 1.0, -1.0)
    Q = np.outer(y, y) * rbf_gram(X, X, 0.5)
    B = np.zeros((m + 1, m + 1))
    B[0, 1:] = B[1:, 0] = y
    B[1:, 1:] = Q
    return B


@pytest.mark.parametrize("seed", range(5))
def test_expand_then_shrink_round_trip(seed):
    B = random_border(6, seed)
    inv = np.linalg.inv(B[:6, :6])
    grown = expand_inverse(inv, B[:6, 6], B[6, 6])
    assert np.linalg.norm(B @ grown - np.eye(7)) < 1e-6
    assert np.allclose(shrink_inverse(grown, 6), inv, atol=1e-9, rtol=0)


@pytest.mark.parametrize("k", [1, 3, 5])
def test_shrink_matches_direct_inverse(k):
    B = random_border(5, 11)
    keep = [i for i in range(6) if i != k]
    assert np.allclose(shrink_inverse(np.linalg.inv(B), k), np.linalg.inv(B[np.ix_(keep, keep)]),
                       atol=1e-8, rtol=0)


def test_shrinking_only_support_vector_falls_back_to_bias_only():
    # the 2x2 inverse has a zero pivot, so the pure update refuses
    with pytest.raises(DegeneracyError):
        shrink_inverse(bordered_inverse_single(-1, 1.0), 1)
    s = IsvmState(100, KernelSpec("rbf", 1.0))
    s.learn_sample(FAR[0], 1)
    s.learn_sample(FAR[1], -1)
    s.unlearn_sample(0)
    # the survivor reaches alpha = 0 on the same step; it may stay on the margin
    assert s.alpha.tolist() == [0.0]
    assert s.margin_gradient(1) == pytest.approx(0.0, abs=1e-12)
    assert s.kkt_violations() == []


def test_duplicate_support_vector_is_degenerate():
    B = random_border(3, 4)
    # append an exact copy of support vector 2
    eta = B[:3, 2]
    with pytest.raises(DegeneracyError):
        expand_inverse(np.linalg.inv(B[:3, :3]), eta, B[2, 2])


def test_first_sample_sets_bias_to_its_label():
    for label in (1, -1):
        s = IsvmState(10, KernelSpec("rbf", 1.0))
        sid = s.learn_sample([0.3, 0.1], label)
        assert s.alpha.tolist() == [0.0]
        assert s.mu == label
        assert s.margin_gradient(sid) == 0.0


def test_satisfied_candidate_lands_in_remainder():
    s = IsvmState(10, KernelSpec("rbf", 1.0))
    s.learn_sample([0.0, 0.0], 1)
    sid = s.learn_sample([0.1, 0.0], 1)
    assert s.memberships()[sid] == "R"
    assert s.alpha.tolist() == [0.0, 0.0]


def test_two_sample_closed_form():
    s = IsvmState(100, KernelSpec("rbf", 1.0))
    s.learn_sample(FAR[0], 1)
    s.learn_sample(FAR[1], -1)
    assert np.allclose(s.alpha, [1.0, 1.0], atol=1e-10)
    assert abs(s.mu) < 1e-10
    assert s.dual_objective() == pytest.approx(1.0, abs=1e-12)


def test_empty_state_dual_is_zero():
    assert IsvmState(1.0, KernelSpec()).dual_objective() == 0.0


def test_unlearn_remainder_changes_nothing():
    X, y = blobs(40, seed=3)
    s = train_isvm(X, y, 1.0, KernelSpec("rbf", 0.5))
    rid = s.set_ids("R")[0]
    before = {int(i): a for i, a in zip(s.ids, s.alpha)}
    mu = s.mu
    s.unlearn_sample(rid)
    after = {int(i): a for i, a in zip(s.ids, s.alpha)}
    del before[rid]
    assert after == before and s.mu == mu


def test_unlearn_one_of_three_support_vectors_matches_oracle():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.2]])
    y = np.array([1, -1, -1])
    kernel = KernelSpec("rbf", 0.7)
    s = train_isvm(X, y, 10.0, kernel)
    assert len(s.support) + len(s.set_ids("E")) == 3
    s.unlearn_sample(1)
    model = solve(Dataset(X[[0, 2]], y[[0, 2]]), SmoConfig(10.0, kernel, 1e-10))
    assert s.dual_objective() == pytest.approx(model_dual_objective(model), abs=1e-6)


def test_unknown_id_raises():
    s = IsvmState(1.0, KernelSpec())
    with pytest.raises(NotFoundError):
        s.unlearn_sample(3)


@pytest.mark.parametrize("C, kind", [(1.0, "rbf"), (100.0, "rbf"), (10.0, "polynomial")])
def test_matches_qp_oracle(C, kind):
    X, y = blobs(25, d=3, seed=7)
    if kind == "rbf":
        kernel, K = KernelSpec("rbf", 0.5), rbf_gram(X, X, 0.5)
    else:
        kernel, K = KernelSpec("polynomial", 0.3, 2, 1.0), poly_gram(X, X, 0.3, 1.0, 2)
    s = train_isvm(X, y, C, kernel)
    reference = dual_value(qp_dual(K, y, C), y, K)
    assert s.dual_objective() == pytest.approx(reference, rel=1e-6, abs=1e-7)
    assert s.kkt_violations() == []


@settings(max_examples=20)
@given(st.integers(2, 40), st.integers(0, 10**6), st.sampled_from([0.5, 5.0, 50.0]))
def test_invariants_hold_after_every_insertion(n, seed, C):
    X, y = blobs(n, d=2, seed=seed)
    s = IsvmState(C, KernelSpec("rbf", 1.0))
    for xi, yi in zip(X, y):
        s.learn_sample(xi, int(yi))
        assert s.kkt_violations() == []
        assert s.inverse_residual() <= 1e-6


@settings(max_examples=15)
@given(st.integers(5, 30), st.integers(0, 10**6))
def test_learn_then_unlearn_restores_decisions(n, seed):
    X, y = blobs(n + 1, d=2, seed=seed)
    s = train_isvm(X[:n], y[:n], 5.0, KernelSpec("rbf", 1.0))
    probes = np.random.default_rng(seed).normal(size=(32, 2)) * 2
    before = decision_values(s.to_model(), probes)
    sid = s.learn_sample(X[n], int(y[n]))
    s.unlearn_sample(sid)
    assert np.abs(decision_values(s.to_model(), probes) - before).max() <= 1e-6
    assert s.kkt_violations() == []


def test_order_does_not_change_optimum():
    X, y = blobs(60, d=3, seed=5)
    kernel = KernelSpec("rbf", 0.4)
    a = train_isvm(X, y, 20.0, kernel).dual_objective()
    perm = np.random.default_rng(1).permutation(60)
    b = train_isvm(X[perm], y[perm], 20.0, kernel).dual_objective()
    assert a == pytest.approx(b, abs=1e-6)


def test_duplicate_samples_are_handled():
    X, y = blobs(20, seed=8)
    X = np.vstack([X, X[:5]])
    y = np.concatenate([y, y[:5]])
    s = train_isvm(X, y, 100.0, KernelSpec("rbf", 1.0))
    assert s.kkt_violations() == []
    K = rbf_gram(X, X, 1.0)
    assert s.dual_objective() == pytest.approx(dual_value(qp_dual(K, y, 100.0), y, K), rel=1e-5)


def test_deterministic_replay():
    X, y = blobs(50, seed=9)
    a = train_isvm(X, y, 3.0, KernelSpec("rbf", 1.0))
    b = train_isvm(X, y, 3.0, KernelSpec("rbf", 1.0))
    assert np.array_equal(a.alpha, b.alpha) and a.mu == b.mu
