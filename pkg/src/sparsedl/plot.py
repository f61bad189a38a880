"""Static SVG figures: learning curves and the class-size histogram.

Output is byte-stable for identical inputs (fixed SVG id salt, no
creation date).
"""

from __future__ import annotations

import csv
import io

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .core import DataError  # noqa: E402
from .mlp import TrainReport  # noqa: E402

_SVG_RC = {"svg.hashsalt": "sparsedl", "svg.fonttype": "path"}


def _save(fig, path):
    with matplotlib.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def learning_curves(report: TrainReport, path, metric: str = "accuracy") -> int:
    """Train and validation ``metric`` per epoch; returns the series count."""
    if metric not in ("accuracy", "loss"):
        raise DataError("metric must be 'accuracy' or 'loss'")
    if report.epochs == 0:
        raise DataError("report has no epochs")
    train = report.train_acc if metric == "accuracy" else report.train_loss
    val = report.val_acc if metric == "accuracy" else report.val_loss
    epochs = np.arange(1, report.epochs + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, train, label=f"train {metric}")
    n = 1
    if val:
        ax.plot(epochs, val, label=f"validation {metric}")
        n += 1
    ax.set_xlabel("epoch")
    ax.set_ylabel(metric)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
    return n


def class_size_histogram(counts, path, bins: int = 20) -> None:
    """How many classes hold a given number of samples."""
    counts = np.asarray(counts)
    if counts.size == 0:
        raise DataError("no class counts")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(counts, bins=min(bins, max(1, int(np.unique(counts).size))))
    ax.set_xlabel("samples per class")
    ax.set_ylabel("number of classes")
    fig.tight_layout()
    _save(fig, path)


def plot_csv(text: str, path, metric: str = "accuracy") -> str:
    """Dispatch on the CSV header: a training report or a ``class,count`` table.

    Returns the kind of figure written.
    """
    header = next(csv.reader(io.StringIO(text)), None)
    if header is None:
        raise DataError("empty CSV")
    if header[:2] == ["class", "count"]:
        rows = list(csv.DictReader(io.StringIO(text)))
        class_size_histogram([int(r["count"]) for r in rows], path)
        return "histogram"
    if tuple(header) == TrainReport.CSV_HEADER:
        learning_curves(TrainReport.from_csv(text), path, metric)
        return "curves"
    raise DataError(f"unrecognized CSV header {header}")
