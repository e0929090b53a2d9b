"""Emulated annotator for groupwise labeling sessions.

Models a perfect human working on the live embedding: pick the focus sample
whose Barnes-Hut neighborhood promises the most groupwise labels, sweep the
kNN-size slider to the most efficient k, deselect mismatched neighbors, and
apply one label to the rest. Effort is counted in actions: one to select the
focus and learn its label, a once-off one to set the slider, and one per
deselect. Applied labels are always the true labels; existing annotations
are never overwritten.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import spatial
from .engine import AnnotationState, apply_label


class SessionComplete(Exception):
    """Every sample is labeled; no focus can be selected."""


@dataclass(frozen=True)
class LabelingEvent:
    """One focus-select / slider / apply cycle.

    labels_applied and actions_spent are the Algorithm-1 counters truncated
    at the chosen k; labels_applied counts the focus unconditionally even if
    it already carried a label (bookkeeping mirrors the counter semantics,
    the annotation itself is never rewritten).
    """

    epoch: int
    focus: int
    chosen_k: int
    labels_applied: int
    actions_spent: int
    efficiency: float

    def __post_init__(self):
        if self.actions_spent < 2:
            raise ValueError("an event costs at least select + slider = 2 actions")
        if self.labels_applied < 1:
            raise ValueError("an event labels at least the focus")


class ActionLog:
    """Ordered event record with running label/action totals."""

    CSV_COLUMNS = ("epoch", "focus", "chosen_k", "labels", "actions",
                   "cumulative_labels", "cumulative_actions")

    def __init__(self, events: list[LabelingEvent] | None = None):
        self.events: list[LabelingEvent] = list(events) if events else []

    def append(self, event: LabelingEvent) -> None:
        self.events.append(event)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def cumulative_labels(self) -> np.ndarray:
        return np.cumsum([e.labels_applied for e in self.events]).astype(np.int64)

    @property
    def cumulative_actions(self) -> np.ndarray:
        return np.cumsum([e.actions_spent for e in self.events]).astype(np.int64)

    @property
    def total_labels(self) -> int:
        return int(sum(e.labels_applied for e in self.events))

    @property
    def total_actions(self) -> int:
        return int(sum(e.actions_spent for e in self.events))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.CSV_COLUMNS)
            labels = actions = 0
            for ev in self.events:
                labels += ev.labels_applied
                actions += ev.actions_spent
                writer.writerow([ev.epoch, ev.focus, ev.chosen_k,
                                 ev.labels_applied, ev.actions_spent,
                                 labels, actions])


def exact_knn(y: np.ndarray, v: int, k_max: int) -> np.ndarray:
    """Indices of the k_max exact nearest neighbors of v, ascending by
    Euclidean distance with ties broken by lower index."""
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if not 0 <= v < n:
        raise ValueError(f"focus {v} out of range")
    if k_max > n - 1:
        raise ValueError(f"k_max {k_max} exceeds n-1 = {n - 1}")
    delta = y - y[v]
    d2 = np.einsum("ij,ij->i", delta, delta)
    order = np.lexsort((np.arange(n), d2))
    order = order[order != v]
    return order[:k_max]


def count_opportunities(tree: spatial.PartitionTree, i: int,
                        true_labels: np.ndarray, annotations: AnnotationState,
                        theta_k: float = 0.8) -> int:
    """Number of entered theta_K cells whose anchor is unlabeled and shares
    i's ground-truth class; the emulator's estimate of obtainable labels."""
    count = 0
    for cell in spatial.bh_neighbors(tree, i, theta_k):
        a = cell.anchor
        if annotations.c[a] < 0 and true_labels[a] == true_labels[i]:
            count += 1
    return count


def select_focus(n_counts: np.ndarray, annotations: AnnotationState) -> int:
    """Argmax opportunity count, lowest index on ties. With all counts zero
    the lowest-index unlabeled sample keeps the session moving; if none
    remains the session is complete."""
    n_counts = np.asarray(n_counts)
    if n_counts.size == 0:
        raise ValueError("empty opportunity vector")
    if n_counts.max() > 0:
        return int(n_counts.argmax())
    unlabeled = np.flatnonzero(annotations.c < 0)
    if unlabeled.size == 0:
        raise SessionComplete("all samples are labeled")
    return int(unlabeled[0])


def emulate_group_label(y: np.ndarray, v: int, true_labels: np.ndarray,
                        annotations: AnnotationState, k_max: int,
                        epoch: int = 0) -> tuple[LabelingEvent, list[tuple[int, int]]]:
    """Walk the kNN-size slider over v's exact neighbor list and commit at
    the most efficient k.

    Counters start at labels=1, actions=1 for selecting the focus. Rank 1
    adds the once-off slider action. Each unlabeled neighbor then either
    raises labels (same class) or costs one deselect action (different
    class); labeled neighbors are free and unchanged. h_k = labels/actions
    is evaluated at every rank and the argmax k* prefers the LARGEST k on
    ties. The event reports the counters truncated at k*, and the returned
    assignments are (sample, class) writes for the focus (if unlabeled) plus
    every unlabeled same-class neighbor within k*. Nothing is overwritten.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if n < 2:
        raise ValueError("focus has no neighbors")
    k_max = min(int(k_max), n - 1)
    if k_max < 1:
        raise ValueError("k_max must be >= 1")

    neighbors = exact_knn(y, v, k_max)
    focus_class = int(true_labels[v])

    labels = 1
    actions = 1
    best_h = -1.0
    best_k = 1
    for rank, j in enumerate(neighbors, start=1):
        if rank == 1:
            actions += 1
        if annotations.c[j] < 0:
            if int(true_labels[j]) == focus_class:
                labels += 1
            else:
                actions += 1
        h = labels / actions
        if h >= best_h:
            best_h = h
            best_k = rank

    chosen = neighbors[:best_k]
    unlabeled = annotations.c[chosen] < 0
    same = true_labels[chosen] == focus_class
    labels_k = 1 + int(np.count_nonzero(unlabeled & same))
    actions_k = 2 + int(np.count_nonzero(unlabeled & ~same))

    assignments: list[tuple[int, int]] = []
    if annotations.c[v] < 0:
        assignments.append((int(v), focus_class))
    for j in chosen[unlabeled & same]:
        assignments.append((int(j), focus_class))

    event = LabelingEvent(epoch=int(epoch), focus=int(v), chosen_k=int(best_k),
                          labels_applied=labels_k, actions_spent=actions_k,
                          efficiency=labels_k / actions_k)
    return event, assignments


def slider_k_max(n: int, n_v: int) -> int:
    """Slider range for a focus with opportunity count n_v: twice the
    estimate with a floor of 50, capped at n-1."""
    return min(n - 1, max(2 * int(n_v), 50))


def run_session(engine, true_labels: np.ndarray | None = None, *,
                log: ActionLog | None = None,
                on_event=None) -> ActionLog:
    """Drive a full labeling session on an Engine.

    Epochs below the start epoch s are plain optimization. From s on, each
    epoch steps the optimizer conditioned on current annotations, rebuilds
    the tree, counts opportunities, selects the focus, emulates one
    group-label event and applies its assignments. Stops when every sample
    is labeled, the epoch budget is exhausted, or on_event(event) returns
    truthy.
    """
    if true_labels is None:
        true_labels = engine.dataset.true_labels
    if true_labels is None:
        raise ValueError("run_session needs ground-truth labels")
    true_labels = np.asarray(true_labels, dtype=np.int64)
    if true_labels.size != engine.n:
        raise ValueError("true_labels length does not match the dataset")

    log = log if log is not None else ActionLog()
    config = engine.config
    annotations = engine.annotations

    while engine.state.epoch < config.e_max:
        e = engine.state.epoch
        if e >= config.s and annotations.n_labeled >= annotations.n:
            break
        engine.step(1)
        if e < config.s:
            continue

        tree = spatial.build(engine.state.y)
        counts = spatial.opportunity_counts(tree, true_labels, annotations.c,
                                            config.theta_k)
        try:
            v = select_focus(counts, annotations)
        except SessionComplete:
            break
        k_max = slider_k_max(engine.n, int(counts[v]))
        event, assignments = emulate_group_label(engine.state.y, v, true_labels,
                                                 annotations, k_max, epoch=e)
        for idx, class_id in assignments:
            apply_label(annotations, idx, class_id, e)
        log.append(event)
        if on_event is not None and on_event(event):
            break
    return log
