"""Render learning-curve CSV data as PNG figures."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import CurvePoint  # noqa: E402


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_curves(curves: Dict[str, Sequence[CurvePoint]], stem) -> List[Path]:
    """Write ``<stem>-time.png`` and ``<stem>-accuracy.png``; returns the paths."""
    stem = Path(stem)
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, points in curves.items():
        ax.plot([p.n_samples_seen for p in points], [p.cumulative_train_seconds for p in points],
                marker="o", ms=3, label=name)
    ax.set_xlabel("training samples seen")
    ax.set_ylabel("training time (s)")
    ax.set_title("Training time")
    ax.legend()
    time_png = _save(fig, stem.with_name(stem.name + "-time.png"))

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, points in curves.items():
        xs = [p.n_samples_seen for p in points]
        ax.plot(xs, [100 * p.validation_accuracy for p in points], marker="o", ms=3, label=f"{name} validation")
        ax.plot(xs, [100 * p.test_accuracy for p in points], ls="--", label=f"{name} test")
    ax.set_xlabel("training samples seen")
    ax.set_ylabel("accuracy (%)")
    ax.set_title("Accuracy")
    ax.legend()
    acc_png = _save(fig, stem.with_name(stem.name + "-accuracy.png"))
    return [time_png, acc_png]
