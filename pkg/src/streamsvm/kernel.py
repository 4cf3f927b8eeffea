"""Kernel functions, gamma resolution and a bounded LRU row cache.

Every kernel value in the package is produced by :func:`kernel_block`, which
evaluates one probe vector against the rows of a C-contiguous matrix.  Each
output element depends only on its own pair of vectors, so a value computed
in a batch is bit-for-bit identical to the same value computed alone.  The
cache, the checkpoint reload path and the symmetry guarantees all rely on
that property.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union
from urllib.parse import parse_qsl

import numpy as np

from .errors import DomainError, InvalidParameterError, ShapeError

KINDS = ("rbf", "polynomial", "sigmoid", "chi_square")

_ALIASES = {
    "rbf": "rbf",
    "gaussian": "rbf",
    "poly": "polynomial",
    "polynomial": "polynomial",
    "sigmoid": "sigmoid",
    "chi2": "chi_square",
    "chi_square": "chi_square",
    "chi-square": "chi_square",
}

_SHORT_NAMES = {"rbf": "rbf", "polynomial": "poly", "sigmoid": "sigmoid", "chi_square": "chi2"}

GammaSetting = Union[str, float]


def resolve_gamma(setting: GammaSetting, feature_dim: int) -> float:
    """Turn a gamma setting into a positive number.

    ``"auto"`` resolves to ``1 / feature_dim``.
    """
    if feature_dim < 1:
        raise InvalidParameterError(f"feature_dim must be >= 1, got {feature_dim}")
    if isinstance(setting, str):
        if setting.strip().lower() != "auto":
            try:
                setting = float(setting)
            except ValueError:
                raise InvalidParameterError(f"gamma must be 'auto' or a number, got {setting!r}")
        else:
            return 1.0 / feature_dim
    value = float(setting)
    if not np.isfinite(value) or value <= 0:
        raise InvalidParameterError(f"gamma must be positive, got {value}")
    return value


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: GammaSetting = "auto"
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).lower())
        if kind is None:
            raise InvalidParameterError(f"unknown kernel kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if isinstance(self.gamma, str):
            if self.gamma.strip().lower() == "auto":
                object.__setattr__(self, "gamma", "auto")
            else:
                object.__setattr__(self, "gamma", resolve_gamma(self.gamma, 1))
        else:
            object.__setattr__(self, "gamma", resolve_gamma(self.gamma, 1))
        if int(self.degree) != self.degree or self.degree < 1:
            raise InvalidParameterError(f"degree must be a positive integer, got {self.degree}")
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "coef0", float(self.coef0))

    @property
    def is_resolved(self) -> bool:
        return not isinstance(self.gamma, str)

    def resolve(self, feature_dim: int) -> "KernelSpec":
        """Return a copy with a numeric gamma."""
        return replace(self, gamma=resolve_gamma(self.gamma, feature_dim))

    def to_text(self) -> str:
        gamma = "auto" if self.gamma == "auto" else repr(float(self.gamma))
        parts = [f"gamma={gamma}"]
        if self.kind == "polynomial":
            parts += [f"degree={self.degree}", f"coef0={self.coef0!r}"]
        elif self.kind == "sigmoid":
            parts.append(f"coef0={self.coef0!r}")
        return f"{_SHORT_NAMES[self.kind]}?" + "&".join(parts)

    @classmethod
    def from_text(cls, text: str) -> "KernelSpec":
        """Parse ``rbf?gamma=auto``, ``poly?gamma=1&degree=3&coef0=1`` and friends."""
        name, _, query = text.strip().partition("?")
        params = dict(parse_qsl(query, keep_blank_values=True, strict_parsing=bool(query)))
        unknown = set(params) - {"gamma", "degree", "coef0"}
        if unknown:
            raise InvalidParameterError(f"unknown kernel parameter(s): {sorted(unknown)}")
        kwargs = {"kind": name}
        if "gamma" in params:
            kwargs["gamma"] = params["gamma"]
        try:
            if "degree" in params:
                kwargs["degree"] = int(params["degree"])
            if "coef0" in params:
                kwargs["coef0"] = float(params["coef0"])
        except ValueError as exc:
            raise InvalidParameterError(f"bad kernel parameter in {text!r}: {exc}") from None
        return cls(**kwargs)

    def __str__(self):
        return self.to_text()


_BLOCK_FLOATS = 32768


def _as_matrix(rows) -> np.ndarray:
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows.reshape(1, -1)
    if rows.ndim != 2:
        raise ShapeError(f"expected a 2-D array of samples, got shape {rows.shape}")
    return rows


def kernel_block(spec: KernelSpec, rows, x) -> np.ndarray:
    """Evaluate ``K(rows[j], x)`` for every row ``j``."""
    rows = _as_matrix(rows)
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if rows.shape[0] and rows.shape[1] != x.shape[0]:
        raise ShapeError(f"dimension mismatch: {rows.shape[1]} vs {x.shape[0]}")
    gamma = spec.gamma if spec.is_resolved else resolve_gamma(spec.gamma, x.shape[0])
    if rows.shape[0] == 0:
        return np.empty(0)
    kind = spec.kind
    if kind == "chi_square" and (x.min() < 0 or rows.min() < 0):
        raise DomainError("chi-square kernel requires nonnegative features")
    # blocks of about 256 KiB keep the temporaries in cache
    step = max(1, _BLOCK_FLOATS // max(1, rows.shape[1]))
    reduced = np.empty(rows.shape[0])
    for start in range(0, rows.shape[0], step):
        reduced[start:start + step] = _reduce_rows(kind, rows[start:start + step], x)
    if kind in ("rbf", "chi_square"):
        return np.exp(-gamma * reduced)
    if kind == "polynomial":
        return (gamma * reduced + spec.coef0) ** spec.degree
    return np.tanh(gamma * reduced + spec.coef0)


def _reduce_rows(kind, rows, x):
    # einsum reduces each row on its own, so a value never depends on which
    # other rows share the block; cached and recomputed entries stay bitwise equal
    if kind == "rbf":
        diff = rows - x
        return np.einsum("ij,ij->i", diff, diff)
    if kind == "chi_square":
        num = rows - x
        num *= num
        den = rows + x
        den[den == 0] = 1.0  # both features are zero, so is the numerator
        num /= den
        return np.einsum("ij->i", num)
    return np.einsum("ij,j->i", rows, x)


def eval_kernel(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(kernel_block(spec, y, x)[0])


def gram_matrix(spec: KernelSpec, rows) -> np.ndarray:
    """Full kernel matrix, built row by row through :func:`kernel_block`."""
    rows = _as_matrix(rows)
    n = rows.shape[0]
    out = np.empty((n, n))
    for i in range(n):
        out[i] = kernel_block(spec, rows, rows[i])
    return out


class KernelCache:
    """LRU cache of kernel rows keyed by stable sample indices.

    A row entry holds the kernel values between one row key and an arbitrary
    set of column keys.  Lookups are element-wise, so a row computed against
    one subset of samples serves later requests on overlapping subsets.
    ``capacity`` is a byte budget covering keys and values of all entries.
    """

    def __init__(self, capacity: int = 64 * 2**20):
        if capacity < 0:
            raise InvalidParameterError("cache capacity must be nonnegative")
        self.capacity = int(capacity)
        self._rows: "OrderedDict[int, tuple[np.ndarray, np.ndarray]]" = OrderedDict()
        self.nbytes = 0
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self._rows)

    def __contains__(self, key):
        return key in self._rows

    def clear(self):
        self._rows.clear()
        self.nbytes = 0

    def lookup(self, row_key: int, col_keys: np.ndarray):
        """Return ``(values, found_mask)`` for the requested columns."""
        values = np.empty(col_keys.shape[0])
        found = np.zeros(col_keys.shape[0], dtype=bool)
        entry = self._rows.get(row_key)
        if entry is not None:
            self._rows.move_to_end(row_key)
            keys, vals = entry
            pos = np.searchsorted(keys, col_keys)
            pos_ok = np.minimum(pos, keys.shape[0] - 1)
            found = (pos < keys.shape[0]) & (keys[pos_ok] == col_keys)
            values[found] = vals[pos_ok[found]]
        n_found = int(found.sum())
        self.hits += n_found
        self.misses += col_keys.shape[0] - n_found
        return values, found

    def store(self, row_key: int, col_keys: np.ndarray, values: np.ndarray):
        entry = self._rows.pop(row_key, None)
        if entry is not None:
            self.nbytes -= entry[0].nbytes + entry[1].nbytes
            keys = np.concatenate([entry[0], col_keys])
            vals = np.concatenate([entry[1], values])
        else:
            keys, vals = col_keys, values
        keys, first = np.unique(keys, return_index=True)
        vals = np.ascontiguousarray(vals[first])
        size = keys.nbytes + vals.nbytes
        if size > self.capacity:
            return
        self._rows[row_key] = (keys, vals)
        self.nbytes += size
        while self.nbytes > self.capacity:
            _, (k, v) = self._rows.popitem(last=False)
            self.nbytes -= k.nbytes + v.nbytes


def kernel_row(
    spec: KernelSpec,
    x,
    samples,
    cache: Optional[KernelCache] = None,
    row_key: Optional[int] = None,
    col_keys: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Kernel values between ``x`` and every sample in ``samples``.

    With a cache, ``row_key`` identifies ``x`` and ``col_keys`` the samples;
    only values missing from the cache are evaluated.
    """
    rows = _as_matrix(samples) if len(samples) else np.empty((0, np.size(x)))
    if cache is None or row_key is None:
        return kernel_block(spec, rows, x)
    if col_keys is None:
        raise InvalidParameterError("col_keys are required when a cache is used")
    col_keys = np.asarray(col_keys, dtype=np.int64)
    if col_keys.shape[0] != rows.shape[0]:
        raise ShapeError("col_keys must match the number of samples")
    values, found = cache.lookup(row_key, col_keys)
    if not found.any():
        fresh = kernel_block(spec, rows, x)
        cache.store(row_key, col_keys, fresh)
        return fresh
    missing = ~found
    if missing.any():
        fresh = kernel_block(spec, rows[missing], x)
        values[missing] = fresh
        cache.store(row_key, col_keys[missing], fresh)
    return values
