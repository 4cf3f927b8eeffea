"""Samples, datasets and the kernel expansion model shared by all solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .errors import DataError, InvalidParameterError, ShapeError
from .kernel import KernelSpec, gram_matrix, kernel_block

HEALTHY = 1
DEFECTED = -1

UNSIGNED = "unsigned"  # coefficient in [0, C], sign carried by the label
SIGNED = "signed"  # coefficient in [min(0, C*y), max(0, C*y)]


class Sample(NamedTuple):
    features: np.ndarray
    label: int


def _check_labels(y: np.ndarray):
    bad = ~np.isin(y, (-1, 1))
    if bad.any():
        raise DataError(f"labels must be +1 or -1, got {np.unique(y[bad])[:5].tolist()}")


class Dataset:
    """An ordered collection of labelled feature vectors.

    Row ``i`` is the sample with stable index ``i``; order is the streaming
    order.
    """

    def __init__(self, X, y, feature_dim=None):
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, feature_dim or 0)
        if X.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ShapeError(f"{X.shape[0]} feature rows but {y.shape} labels")
        if feature_dim is not None and X.shape[1] != feature_dim:
            raise ShapeError(f"expected feature_dim {feature_dim}, got {X.shape[1]}")
        if X.shape[0] and X.shape[1] == 0:
            raise DataError("samples must have at least one feature")
        if not np.isfinite(X).all():
            raise DataError("features must be finite")
        _check_labels(y)
        self.X = X
        self.y = y.astype(np.int64)

    @classmethod
    def from_samples(cls, samples) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise DataError("cannot build a dataset from zero samples")
        return cls(np.vstack([np.asarray(s.features, dtype=float) for s in samples]),
                   [s.label for s in samples])

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i) -> Sample:
        return Sample(self.X[i], int(self.y[i]))

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[indices], self.y[indices], feature_dim=self.feature_dim)

    def class_counts(self) -> dict:
        return {1: int((self.y == 1).sum()), -1: int((self.y == -1).sum())}

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y)

    def __repr__(self):
        return f"Dataset(n={len(self)}, feature_dim={self.feature_dim})"


@dataclass(frozen=True, eq=False)
class Model:
    """Kernel expansion ``f(x) = sum_j w_j K(x_j, x) + bias``.

    With the unsigned convention ``w_j = coefficients[j] * labels[j]``; with
    the signed one ``w_j = coefficients[j]``.
    """

    kernel: KernelSpec
    support_vectors: np.ndarray
    labels: np.ndarray
    coefficients: np.ndarray
    bias: float
    C: float
    convention: str = UNSIGNED
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        sv = np.ascontiguousarray(self.support_vectors, dtype=np.float64)
        if sv.ndim == 1:
            sv = sv.reshape(-1, 1) if sv.size else sv.reshape(0, 0)
        coef = np.asarray(self.coefficients, dtype=np.float64).ravel()
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if not (sv.shape[0] == coef.shape[0] == labels.shape[0]):
            raise ShapeError("support vectors, labels and coefficients differ in length")
        if self.convention not in (UNSIGNED, SIGNED):
            raise InvalidParameterError(f"unknown convention {self.convention!r}")
        for name, arr in (("support_vectors", sv), ("labels", labels), ("coefficients", coef)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def weights(self) -> np.ndarray:
        if self.convention == UNSIGNED:
            return self.coefficients * self.labels
        return self.coefficients

    @property
    def n_support(self) -> int:
        return self.coefficients.shape[0]

    def to_signed(self) -> "Model":
        if self.convention == SIGNED:
            return self
        return Model(self.kernel, self.support_vectors, self.labels,
                     self.coefficients * self.labels, self.bias, self.C, SIGNED, dict(self.meta))

    def to_unsigned(self) -> "Model":
        if self.convention == UNSIGNED:
            return self
        return Model(self.kernel, self.support_vectors, self.labels,
                     self.coefficients * self.labels, self.bias, self.C, UNSIGNED, dict(self.meta))

    def scaled(self, factor: float) -> "Model":
        """Model with every coefficient and the bias multiplied by ``factor``."""
        return Model(self.kernel, self.support_vectors, self.labels,
                     self.coefficients * factor, self.bias * factor, self.C,
                     self.convention, dict(self.meta))


def decision_value(model: Model, x) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    if model.n_support == 0:
        return model.bias
    if x.shape[0] != model.support_vectors.shape[1]:
        raise ShapeError(f"expected {model.support_vectors.shape[1]} features, got {x.shape[0]}")
    k = kernel_block(model.kernel, model.support_vectors, x)
    return float(k @ model.weights + model.bias)


def decision_values(model: Model, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if model.n_support == 0:
        return np.full(X.shape[0], model.bias)
    if X.shape[1] != model.support_vectors.shape[1]:
        raise ShapeError(f"expected {model.support_vectors.shape[1]} features, got {X.shape[1]}")
    w = model.weights
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        out[i] = kernel_block(model.kernel, model.support_vectors, X[i]) @ w
    return out + model.bias


def sign_of(values):
    """Map decision values to labels; exactly zero maps to +1."""
    return np.where(np.asarray(values) >= 0, 1, -1)


def predict(model: Model, x) -> int:
    return int(sign_of(decision_value(model, x)))


def predict_many(model: Model, X) -> np.ndarray:
    return sign_of(decision_values(model, X))


def model_dual_objective(model: Model) -> float:
    """Dual value ``sum_i |w_i| - 1/2 w^T K w`` of a model's expansion."""
    if model.n_support == 0:
        return 0.0
    w = model.weights
    K = gram_matrix(model.kernel, model.support_vectors)
    return float(np.abs(w).sum() - 0.5 * w @ K @ w)
