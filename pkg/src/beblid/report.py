"""CSV tables and matplotlib figures rendered next to CLI reports."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .boosting import RoundRecord
from .evaluation import roc_curve

__all__ = [
    "save_ap_histogram",
    "save_bench_figure",
    "save_roc_figure",
    "save_training_figure",
    "write_csv",
]


def write_csv(path: Path | str, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _finish(fig, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_roc_figure(path: Path | str, curves: dict[str, tuple[np.ndarray, np.ndarray]]) -> Path:
    """ROC curves, one per named variant; inputs are (scores, labels) pairs."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, (scores, labels) in curves.items():
        fpr, tpr = roc_curve(np.asarray(scores), np.asarray(labels))
        ax.plot(fpr, tpr, label=name)
    ax.plot([0, 1], [0, 1], ls=":", c="gray", lw=1)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    if len(curves) > 1 or curves:
        ax.legend(fontsize=8)
    return _finish(fig, path)


def save_ap_histogram(path: Path | str, aps: np.ndarray, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.hist(np.asarray(aps), bins=20, range=(0.0, 1.0), color="steelblue")
    ax.axvline(float(np.mean(aps)), color="crimson", lw=1.5, label=f"mean {np.mean(aps):.3f}")
    ax.set_xlabel("average precision")
    ax.set_ylabel("queries")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_training_figure(path: Path | str, rounds: Sequence[RoundRecord]) -> Path:
    """Loss and weak-learner error per boosting round."""
    idx = [r.round_index for r in rounds]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    ax1.plot(idx, [r.loss for r in rounds], c="steelblue")
    ax1.set_xlabel("round")
    ax1.set_ylabel("exponential loss")
    ax1.set_yscale("log")
    ax2.plot(idx, [r.error for r in rounds], c="darkorange")
    ax2.axhline(0.5, ls=":", c="gray", lw=1)
    ax2.set_xlabel("round")
    ax2.set_ylabel("weighted error")
    ax2.set_ylim(0, 0.55)
    return _finish(fig, path)


def save_bench_figure(path: Path | str, times_ms: Sequence[float]) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    reps = np.arange(1, len(times_ms) + 1)
    ax.plot(reps, times_ms, marker="o", ms=3, c="steelblue")
    ax.set_xlabel("repetition")
    ax.set_ylabel("time per image (ms)")
    ax.set_ylim(bottom=0)
    return _finish(fig, path)
