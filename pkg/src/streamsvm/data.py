"""Dataset I/O, deterministic splits and the synthetic pipe-scan generator."""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from .core import Dataset
from .errors import ConfigurationError, DataError, EmptyDatasetError, InvalidParameterError, ParseError


# -- sparse text -----------------------------------------------------------------


def _parse_label(token: str, remap01: bool, line_number: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"bad label {token!r}", line_number) from None
    if value == 1:
        return 1
    if value == -1:
        return -1
    if remap01 and value == 0:
        return -1
    raise ParseError(f"label {token!r} is not +1/-1" + ("" if remap01 else " (use remap01 for 0/1 labels)"),
                     line_number)


def load_sparse_text(path, remap01: bool = False) -> Dataset:
    """Read ``<label> <index>:<value> ...`` lines; indices are 1-based."""
    labels = []
    rows = []
    max_index = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            label = _parse_label(tokens[0], remap01, line_number)
            entries = {}
            for tok in tokens[1:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise ParseError(f"expected index:value, got {tok!r}", line_number)
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise ParseError(f"bad feature {tok!r}", line_number) from None
                if idx < 1:
                    raise ParseError(f"feature index must be >= 1, got {idx}", line_number)
                if idx in entries:
                    raise ParseError(f"duplicate feature index {idx}", line_number)
                if not math.isfinite(val):
                    raise ParseError(f"non-finite feature value {val_s!r}", line_number)
                entries[idx] = val
            if entries:
                max_index = max(max_index, max(entries))
            labels.append(label)
            rows.append(entries)
    if not rows:
        raise EmptyDatasetError(f"{path}: no samples")
    if max_index == 0:
        raise DataError(f"{path}: no features present")
    X = np.zeros((len(rows), max_index))
    for r, entries in enumerate(rows):
        for idx, val in entries.items():
            X[r, idx - 1] = val
    return Dataset(X, labels)


def _atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_sparse_text(dataset: Dataset, path):
    """Write a dataset in sparse text form; zero features are omitted.

    The last feature is always written so the dimension survives a reload.
    """
    d = dataset.feature_dim
    lines = []
    for x, label in zip(dataset.X, dataset.y):
        nz = np.flatnonzero(x)
        feats = [f"{j + 1}:{float(x[j])!r}" for j in nz]
        if d and (nz.size == 0 or nz[-1] != d - 1):
            feats.append(f"{d}:0.0")
        lines.append(" ".join([f"{int(label):+d}"] + feats))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load_csv(path, remap01: bool = False) -> Dataset:
    """Read dense ``label,f1,f2,...`` rows; a non-numeric first row is a header."""
    labels, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for line_number, rec in enumerate(csv.reader(fh), start=1):
            if not rec or not "".join(rec).strip():
                continue
            try:
                values = [float(v) for v in rec[1:]]
            except ValueError:
                if line_number == 1:
                    continue
                raise ParseError("non-numeric feature", line_number) from None
            try:
                float(rec[0])
            except ValueError:
                if line_number == 1:
                    continue
            labels.append(_parse_label(rec[0].strip(), remap01, line_number))
            rows.append(values)
    if not rows:
        raise EmptyDatasetError(f"{path}: no samples")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ParseError(f"rows have differing feature counts {sorted(widths)}")
    return Dataset(np.array(rows), labels)


def load_dataset(path, remap01: bool = False) -> Dataset:
    """Load sparse text, or dense CSV when the file name ends in ``.csv``."""
    if str(path).lower().endswith(".csv"):
        return load_csv(path, remap01)
    return load_sparse_text(path, remap01)


# -- splitting and shuffling ---------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.3
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigurationError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")


def _floor_fraction(fraction, n):
    # guard against 0.29 * 100 == 28.999999999999996
    return int(math.floor(fraction * n + 1e-9))


def split_indices(n: int, spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n < 10:
        raise ConfigurationError(f"need at least 10 samples to split, got {n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_pool = _floor_fraction(spec.train_fraction, n)
    n_val = _floor_fraction(spec.validation_fraction, n_pool)
    pool, test = perm[:n_pool], perm[n_pool:]
    val, train = pool[:n_val], pool[n_val:]
    if len(train) == 0 or len(test) == 0 or (spec.validation_fraction > 0 and len(val) == 0):
        raise ConfigurationError(
            f"split of {n} samples gives train={len(train)} validation={len(val)} test={len(test)}")
    return train, val, test


def split(dataset: Dataset, spec: SplitSpec):
    """Return ``(train, validation, test)`` datasets."""
    tr, va, te = split_indices(len(dataset), spec)
    return dataset.subset(tr), dataset.subset(va), dataset.subset(te)


def shuffle_epoch(n: int, epoch_index: int, seed: int) -> np.ndarray:
    """Permutation of ``range(n)`` determined by ``(seed, epoch_index)``."""
    if n < 0 or epoch_index < 0:
        raise InvalidParameterError("n and epoch_index must be nonnegative")
    rng = np.random.default_rng([abs(int(seed)), int(seed < 0), int(epoch_index)])
    return rng.permutation(n)


# -- synthetic pipe scans ------------------------------------------------------------


@dataclass(frozen=True)
class PipeScanConfig:
    """One sample is one sensor revolution: a distance per beam."""

    n_samples: int = 1000
    beams_per_revolution: int = 180
    nominal_radius: float = 100.0
    noise_sigma: float = 0.5
    defect_rate: float = 0.3
    defect_depth_range: Tuple[float, float] = (1.0, 5.0)
    defect_width_range: Tuple[int, int] = (4, 20)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.defect_depth_range
        wlo, whi = self.defect_width_range
        problems = []
        if self.n_samples < 1:
            problems.append("n_samples must be positive")
        if self.beams_per_revolution < 1:
            problems.append("beams_per_revolution must be positive")
        if not self.nominal_radius > 0:
            problems.append("nominal_radius must be positive")
        if self.noise_sigma < 0:
            problems.append("noise_sigma must be nonnegative")
        if not 0 <= self.defect_rate <= 1:
            problems.append("defect_rate must be in [0, 1]")
        if not 0 < lo <= hi < self.nominal_radius:
            problems.append("defect_depth_range must lie within (0, nominal_radius)")
        if not 1 <= wlo <= whi <= self.beams_per_revolution:
            problems.append("defect_width_range must lie within [1, beams_per_revolution]")
        if problems:
            raise ConfigurationError("; ".join(problems))


def pipe_scan_components(config: PipeScanConfig):
    """Generate ``(healthy_profiles, defect_offsets, labels)``.

    Features are ``healthy_profiles + defect_offsets``; offsets are zero on
    healthy samples and on beams outside the defect arc.
    """
    rng = np.random.default_rng(config.seed)
    n, d = config.n_samples, config.beams_per_revolution
    base = config.nominal_radius + rng.normal(0.0, config.noise_sigma, size=(n, d))
    offsets = np.zeros((n, d))
    defected = rng.random(n) < config.defect_rate
    lo, hi = config.defect_depth_range
    wlo, whi = config.defect_width_range
    for i in np.flatnonzero(defected):
        width = int(rng.integers(wlo, whi + 1))
        start = int(rng.integers(0, d))
        depth = rng.uniform(lo, hi)
        sign = 1.0 if rng.random() < 0.5 else -1.0  # dent reads farther, bulge nearer
        offsets[i, (start + np.arange(width)) % d] = sign * depth
    labels = np.where(defected, -1, 1)
    return base, offsets, labels


def generate_pipe_scan(config: PipeScanConfig) -> Dataset:
    base, offsets, labels = pipe_scan_components(config)
    return Dataset(base + offsets, labels)
