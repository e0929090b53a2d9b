"""Embedding-quality and labeling-efficiency measurement.

Embedding quality is summarized by leave-one-out kNN classification over
the low-dimensional positions, reported per class with mean and standard
deviation across the per-class accuracies. Labeling efficiency is the
cumulative (actions, labels) trajectory of an annotation session.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .affinity import pairwise_sq_distances
from .emulator import ActionLog


@dataclass(frozen=True)
class KnnReport:
    """Per-class leave-one-out kNN accuracies with their mean and spread."""

    per_class_accuracy: np.ndarray
    class_ids: np.ndarray
    mean: float
    std: float
    k: int

    def __post_init__(self):
        if self.per_class_accuracy.size:
            lo = float(self.per_class_accuracy.min())
            hi = float(self.per_class_accuracy.max())
            if not lo - 1e-12 <= self.mean <= hi + 1e-12:
                raise ValueError("mean outside per-class range")
        if self.std < 0:
            raise ValueError("std must be >= 0")


def knn_accuracy(y: np.ndarray, labels: np.ndarray, k: int = 4) -> KnnReport:
    """Leave-one-out majority vote over the k exact nearest neighbors.

    Neighbor ties at equal distance resolve to the lower index. Vote ties
    resolve to the tied class appearing nearest in the neighbor list (for
    a two-way tie this is the nearest neighbor's class). Accuracy is
    computed per class, then aggregated as mean and population std over
    the per-class values.
    """
    y = np.asarray(y, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = y.shape[0]
    if labels.shape != (n,):
        raise ValueError("labels length must match embedding rows")
    if k < 1 or n <= k:
        raise ValueError(f"need 1 <= k < n, got k={k} n={n}")

    d2 = pairwise_sq_distances(y)
    np.fill_diagonal(d2, np.inf)
    # Stable sort keeps equal distances in ascending index order.
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    votes = labels[order]

    preds = np.empty(n, dtype=np.int64)
    for i in range(n):
        row = votes[i]
        counts = np.bincount(row)
        tied = np.flatnonzero(counts == counts.max())
        if tied.size == 1:
            preds[i] = tied[0]
        else:
            tied_set = set(int(t) for t in tied)
            for cls in row:
                if int(cls) in tied_set:
                    preds[i] = cls
                    break

    class_ids = np.unique(labels)
    per_class = np.array([float(np.mean(preds[labels == c] == c))
                          for c in class_ids])
    return KnnReport(per_class_accuracy=per_class, class_ids=class_ids,
                     mean=float(per_class.mean()), std=float(per_class.std()),
                     k=k)


def efficiency_curve(log: ActionLog) -> list[tuple[int, int]]:
    """Cumulative (actions, labels) pairs, one per event."""
    out: list[tuple[int, int]] = []
    actions = labels = 0
    for event in log:
        actions += event.actions_spent
        labels += event.labels_applied
        out.append((actions, labels))
    return out


def knn_over_epochs(snapshots, true_labels: np.ndarray, k: int = 4,
                    stride: int = 1) -> list[tuple[int, float]]:
    """Mean kNN accuracy per embedding snapshot.

    `snapshots` is an iterable of (epoch, positions); with stride > 1 only
    epochs on the stride grid are evaluated.
    """
    out: list[tuple[int, float]] = []
    for epoch, y in snapshots:
        if stride > 1 and epoch % stride != 0:
            continue
        out.append((int(epoch), knn_accuracy(y, true_labels, k).mean))
    return out


def write_knn_table(path, table: dict[str, dict[str, KnnReport]],
                    percent: bool = True) -> None:
    """CSV with feature-set rows and dataset columns; each cell is the
    kNN report formatted as mean+-std."""
    columns: list[str] = []
    for row in table.values():
        for name in row:
            if name not in columns:
                columns.append(name)
    scale = 100.0 if percent else 1.0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["features", *columns])
        for feature_set, row in table.items():
            cells = []
            for name in columns:
                report = row.get(name)
                if report is None:
                    cells.append("")
                else:
                    cells.append(f"{report.mean * scale:.1f}+-{report.std * scale:.1f}")
            writer.writerow([feature_set, *cells])
