import math

import numpy as np
import pytest

from oracles import rbf_gram
from streamsvm.core import (SIGNED, UNSIGNED, Dataset, Model, decision_value, decision_values,
                            model_dual_objective, predict, predict_many, sign_of)
from streamsvm.errors import DataError, ShapeError
from streamsvm.kernel import KernelSpec

RBF = KernelSpec("rbf", 1.0)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset([[1.0], [2.0]], [1, 0])
    with pytest.raises(DataError):
        Dataset([[np.nan]], [1])
    with pytest.raises(ShapeError):
        Dataset([[1.0], [2.0]], [1])
    ds = Dataset([[1.0, 2.0], [3.0, 4.0]], [1, -1])
    assert ds.class_counts() == {1: 1, -1: 1}
    assert ds[1].label == -1
    assert ds.subset([1]) == Dataset([[3.0, 4.0]], [-1])


def test_empty_model_returns_bias():
    model = Model(RBF, np.zeros((0, 2)), [], [], 0.5, 1.0)
    assert decision_value(model, [1.0, 2.0]) == 0.5


def test_single_support_hand_sum():
    # K = 0.5 when the squared distance is ln 2
    model = Model(RBF, [[0.0]], [1], [1.0], 0.0, 10.0)
    assert decision_value(model, [math.sqrt(math.log(2))]) == pytest.approx(0.5, abs=1e-12)


def test_negating_labels_and_bias_flips_decisions():
    rng = np.random.default_rng(0)
    sv = rng.normal(size=(5, 3))
    labels = np.array([1, -1, 1, -1, -1])
    coef = rng.random(5)
    model = Model(RBF, sv, labels, coef, 0.3, 1.0)
    flipped = Model(RBF, sv, -labels, coef, -0.3, 1.0)
    X = rng.normal(size=(10, 3))
    assert np.allclose(decision_values(model, X), -decision_values(flipped, X), atol=1e-15)


def test_decision_values_match_oracle_expansion():
    rng = np.random.default_rng(1)
    sv, X = rng.normal(size=(7, 4)), rng.normal(size=(9, 4))
    labels = np.where(rng.random(7) < 0.5, 1, -1)
    coef = rng.random(7)
    model = Model(KernelSpec("rbf", 0.4), sv, labels, coef, -0.2, 1.0)
    expected = rbf_gram(X, sv, 0.4) @ (coef * labels) - 0.2
    assert np.allclose(decision_values(model, X), expected, atol=1e-12)
    assert [decision_value(model, x) for x in X] == pytest.approx(list(expected), abs=1e-12)


def test_sign_of_tie_rule():
    assert sign_of(0.7) == 1
    assert sign_of(-0.7) == -1
    assert sign_of(0.0) == 1


def test_predict_paths_agree():
    rng = np.random.default_rng(2)
    model = Model(RBF, rng.normal(size=(4, 2)), [1, -1, 1, -1], rng.random(4), 0.0, 1.0)
    X = rng.normal(size=(20, 2))
    assert predict_many(model, X).tolist() == [predict(model, x) for x in X]


def test_signed_unsigned_conversion_preserves_decisions():
    rng = np.random.default_rng(3)
    model = Model(RBF, rng.normal(size=(4, 2)), [1, -1, -1, 1], rng.random(4), 0.1, 1.0)
    signed = model.to_signed()
    assert signed.convention == SIGNED
    assert signed.to_unsigned().convention == UNSIGNED
    X = rng.normal(size=(6, 2))
    assert np.array_equal(decision_values(model, X), decision_values(signed, X))


def test_model_arrays_are_read_only():
    model = Model(RBF, [[0.0, 1.0]], [1], [1.0], 0.0, 1.0)
    with pytest.raises(ValueError):
        model.coefficients[0] = 2.0


def test_model_dual_objective_two_sample_optimum():
    model = Model(RBF, [[0.0, 0.0], [50.0, 0.0]], [1, -1], [1.0, 1.0], 0.0, 100.0)
    assert model_dual_objective(model) == pytest.approx(1.0, abs=1e-12)
