"""Classifier-in-the-loop active learning baselines and the embedding-
driven labeling strategy adapter.

The classifier is a small feed-forward network: input (D) -> 25% dropout ->
ReLU dense layer of ceil(D/4) units (floor 4) -> 25% dropout -> softmax
output over K classes. It trains incrementally with mini-batch cross
entropy under an adaptive-moment optimizer and is repeatedly retrained as
labels accumulate. Sampling baselines pick the next batch by predictive
uncertainty (max probability, margin, or entropy) or uniformly at random;
the embedding strategy takes its labels from emulated groupwise sessions
and records accuracy at the emulator's cumulative action counts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from . import emulator
from .dataset import Dataset, FoldSplit
from .engine import Engine, TsneConfig

STRATEGIES = ("random", "uncertainty", "margin", "entropy")

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


def hidden_width(n_features: int) -> int:
    """Quarter of the input width, rounded up, never below 4."""
    return max(4, math.ceil(n_features / 4))


class MlpClassifier:
    """D -> dropout .25 -> ReLU(ceil(D/4)) -> dropout .25 -> softmax(K).

    Dropout is inverted (activations rescaled at train time) and disabled
    at inference. Optimizer moments persist across train_incremental calls
    so retraining continues from the current state.
    """

    def __init__(self, n_features: int, n_classes: int, seed: int = 0,
                 dropout: float = 0.25, learning_rate: float = 1e-3,
                 batch_size: int = 32):
        if n_features < 1 or n_classes < 2:
            raise ValueError("need n_features >= 1 and n_classes >= 2")
        if not 0 <= dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        self.n_features = n_features
        self.n_classes = n_classes
        self.n_hidden = hidden_width(n_features)
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.batch_size = batch_size

        rng = np.random.default_rng(seed)
        h = self.n_hidden
        self.w1 = rng.normal(0.0, np.sqrt(2.0 / n_features), size=(n_features, h))
        self.b1 = np.zeros(h)
        self.w2 = rng.normal(0.0, np.sqrt(2.0 / h), size=(h, n_classes))
        self.b2 = np.zeros(n_classes)

        self._moments = [(np.zeros_like(p), np.zeros_like(p))
                         for p in (self.w1, self.b1, self.w2, self.b2)]
        self.step_count = 0

    def parameter_count(self) -> int:
        return (self.w1.size + self.b1.size + self.w2.size + self.b2.size)

    def _forward(self, x: np.ndarray, rng: np.random.Generator | None):
        """Returns (probs, cache); rng enables dropout masks."""
        keep = 1.0 - self.dropout
        if rng is not None and self.dropout > 0:
            m0 = (rng.random(x.shape) < keep) / keep
            x = x * m0
        else:
            m0 = None
        pre = x @ self.w1 + self.b1
        hid = np.maximum(pre, 0.0)
        if rng is not None and self.dropout > 0:
            m1 = (rng.random(hid.shape) < keep) / keep
            hid_d = hid * m1
        else:
            m1 = None
            hid_d = hid
        logits = hid_d @ self.w2 + self.b2
        shifted = logits - logits.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        probs = expd / expd.sum(axis=1, keepdims=True)
        return probs, (x, pre, hid_d, m1)

    def loss_and_gradients(self, x: np.ndarray, targets: np.ndarray,
                           rng: np.random.Generator | None = None):
        """Mean cross-entropy and gradients for one batch."""
        x = np.asarray(x, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.int64)
        b = x.shape[0]
        probs, (x_in, pre, hid_d, m1) = self._forward(x, rng)
        eps = 1e-12
        loss = float(-np.mean(np.log(probs[np.arange(b), targets] + eps)))

        d_logits = probs.copy()
        d_logits[np.arange(b), targets] -= 1.0
        d_logits /= b
        g_w2 = hid_d.T @ d_logits
        g_b2 = d_logits.sum(axis=0)
        d_hid = d_logits @ self.w2.T
        if m1 is not None:
            d_hid = d_hid * m1
        d_pre = d_hid * (pre > 0)
        g_w1 = x_in.T @ d_pre
        g_b1 = d_pre.sum(axis=0)
        return loss, (g_w1, g_b1, g_w2, g_b2)

    def _adam_update(self, grads) -> None:
        self.step_count += 1
        t = self.step_count
        params = (self.w1, self.b1, self.w2, self.b2)
        for p, g, (m, v) in zip(params, grads, self._moments):
            m *= _ADAM_BETA1
            m += (1 - _ADAM_BETA1) * g
            v *= _ADAM_BETA2
            v += (1 - _ADAM_BETA2) * g * g
            m_hat = m / (1 - _ADAM_BETA1 ** t)
            v_hat = v / (1 - _ADAM_BETA2 ** t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)


def train_incremental(clf: MlpClassifier, features: np.ndarray,
                      labels: np.ndarray, epochs: int = 50,
                      seed: int = 0) -> MlpClassifier:
    """Mini-batch cross-entropy training continuing from the classifier's
    current parameters; dropout active. Deterministic given seed and call
    order."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("need at least one labeled sample")
    if labels.shape != (features.shape[0],):
        raise ValueError("labels length must match features")
    if labels.min() < 0 or labels.max() >= clf.n_classes:
        raise ValueError("label outside classifier's class range")

    rng = np.random.default_rng(seed)
    n = features.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, clf.batch_size):
            batch = order[start:start + clf.batch_size]
            _, grads = clf.loss_and_gradients(features[batch], labels[batch], rng)
            clf._adam_update(grads)
    return clf


def predict_proba(clf: MlpClassifier, features: np.ndarray) -> np.ndarray:
    """Class probabilities with dropout disabled; rows sum to 1."""
    features = np.asarray(features, dtype=np.float64)
    probs, _ = clf._forward(features, rng=None)
    return probs


def predict(clf: MlpClassifier, features: np.ndarray) -> np.ndarray:
    return predict_proba(clf, features).argmax(axis=1)


def accuracy(clf: MlpClassifier, features: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(clf, features) == np.asarray(labels)))


def select_batch(strategy: str, probs: np.ndarray, pool: np.ndarray,
                 batch: int = 10, seed: int = 0) -> list[int]:
    """Pick the next samples to label from `pool` (one probs row per pool
    entry). uncertainty: smallest max-probability first; margin: smallest
    top1 - top2 first; entropy: largest natural-log entropy first; random:
    uniform without replacement. Score ties resolve to the lower index.
    """
    pool = np.asarray(pool, dtype=np.int64)
    if pool.size == 0:
        raise ValueError("empty pool")
    take = min(batch, pool.size)

    if strategy == "random":
        rng = np.random.default_rng(seed)
        chosen = rng.choice(np.sort(pool), size=take, replace=False)
        return [int(i) for i in chosen]

    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[0] != pool.size:
        raise ValueError("one probs row per pool entry required")
    if strategy == "uncertainty":
        score = probs.max(axis=1)
    elif strategy == "margin":
        part = np.sort(probs, axis=1)
        score = part[:, -1] - part[:, -2]
    elif strategy == "entropy":
        safe = np.clip(probs, 1e-12, None)
        score = -(-safe * np.log(safe)).sum(axis=1)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    order = np.lexsort((pool, score))
    return [int(pool[i]) for i in order[:take]]


@dataclass(frozen=True)
class ALConfig:
    """Harness settings: per-round batch, action budget, training epochs."""

    batch: int = 10
    budget: int = 400
    train_epochs: int = 50
    reference_epochs: int = 500
    seed: int = 0


@dataclass(frozen=True)
class ALCurve:
    """(actions, validation accuracy) checkpoints for one fold run."""

    strategy: str
    fold_id: int
    checkpoints: tuple[tuple[int, float], ...]

    def __post_init__(self):
        acts = [a for a, _ in self.checkpoints]
        if any(b <= a for a, b in zip(acts, acts[1:])):
            raise ValueError("checkpoint actions must strictly increase")


def _fold_rng(config: ALConfig, fold_id: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, fold_id])


def _seed_labels(train_labels: np.ndarray, rng: np.random.Generator) -> list[int]:
    """One random seed label per class present in the train split."""
    chosen = []
    for c in np.unique(train_labels):
        members = np.flatnonzero(train_labels == c)
        chosen.append(int(rng.choice(members)))
    return sorted(chosen)


def run_active_learning(dataset: Dataset, folds: list[FoldSplit], strategy: str,
                        config: ALConfig = ALConfig()) -> list[ALCurve]:
    """Sampling-strategy harness. Per fold: seed one label per class, then
    loop train / evaluate / record (actions = labeled count) / select the
    next batch, until the action budget or the train split is exhausted."""
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if dataset.true_labels is None:
        raise ValueError("active learning needs ground-truth labels")

    curves = []
    for fold in folds:
        rng = _fold_rng(config, fold.fold_id)
        x_train = dataset.features[fold.train_indices]
        y_train = dataset.true_labels[fold.train_indices]
        x_val = dataset.features[fold.validation_indices]
        y_val = dataset.true_labels[fold.validation_indices]

        clf = MlpClassifier(dataset.dim, dataset.n_classes,
                            seed=int(rng.integers(2 ** 31)))
        labeled = _seed_labels(y_train, rng)
        checkpoints = []
        while True:
            train_incremental(clf, x_train[labeled], y_train[labeled],
                              epochs=config.train_epochs,
                              seed=int(rng.integers(2 ** 31)))
            checkpoints.append((len(labeled), accuracy(clf, x_val, y_val)))
            pool = np.setdiff1d(np.arange(len(y_train)), labeled)
            if len(labeled) >= config.budget or pool.size == 0:
                break
            if strategy == "random":
                picked = select_batch(strategy, None, pool, config.batch,
                                      seed=int(rng.integers(2 ** 31)))
            else:
                probs = predict_proba(clf, x_train[pool])
                picked = select_batch(strategy, probs, pool, config.batch,
                                      seed=int(rng.integers(2 ** 31)))
            labeled = sorted(labeled + picked)
        curves.append(ALCurve(strategy=strategy, fold_id=fold.fold_id,
                              checkpoints=tuple(checkpoints)))
    return curves


def run_tsne_strategy(dataset: Dataset, folds: list[FoldSplit],
                      engine_config: TsneConfig,
                      config: ALConfig = ALConfig()) -> list[ALCurve]:
    """Embedding-driven strategy: labels come from an emulated groupwise
    session on the fold's train split. Whenever cumulative actions cross a
    multiple of the batch size, the classifier retrains on the annotations
    accumulated so far and the curve records the exact cumulative action
    count (not a multiple)."""
    if dataset.true_labels is None:
        raise ValueError("active learning needs ground-truth labels")

    curves = []
    for fold in folds:
        rng = _fold_rng(config, fold.fold_id)
        sub = dataset.subset(fold.train_indices, name=f"{dataset.name}-train{fold.fold_id}")
        x_train = sub.features
        y_train = sub.true_labels
        x_val = dataset.features[fold.validation_indices]
        y_val = dataset.true_labels[fold.validation_indices]

        engine = Engine(sub, replace(engine_config,
                                     seed=engine_config.seed + fold.fold_id))
        clf = MlpClassifier(dataset.dim, dataset.n_classes,
                            seed=int(rng.integers(2 ** 31)))
        checkpoints = []
        actions_seen = 0

        def on_event(event) -> bool:
            nonlocal actions_seen
            before = actions_seen
            actions_seen += event.actions_spent
            if actions_seen // config.batch > before // config.batch:
                mask = engine.annotations.c >= 0
                train_incremental(clf, x_train[mask], engine.annotations.c[mask],
                                  epochs=config.train_epochs,
                                  seed=int(rng.integers(2 ** 31)))
                checkpoints.append((actions_seen, accuracy(clf, x_val, y_val)))
            return actions_seen >= config.budget

        emulator.run_session(engine, y_train, on_event=on_event)
        curves.append(ALCurve(strategy="tsne", fold_id=fold.fold_id,
                              checkpoints=tuple(checkpoints)))
    return curves


def reference_accuracy(dataset: Dataset, fold: FoldSplit,
                       config: ALConfig = ALConfig()) -> float:
    """Validation accuracy of a fresh classifier trained on the fully
    labeled train split; the yardstick for actions_to_fraction."""
    rng = _fold_rng(config, fold.fold_id)
    clf = MlpClassifier(dataset.dim, dataset.n_classes,
                        seed=int(rng.integers(2 ** 31)))
    train_incremental(clf, dataset.features[fold.train_indices],
                      dataset.true_labels[fold.train_indices],
                      epochs=config.reference_epochs,
                      seed=int(rng.integers(2 ** 31)))
    return accuracy(clf, dataset.features[fold.validation_indices],
                    dataset.true_labels[fold.validation_indices])


def actions_to_fraction(curve: ALCurve, reference: float,
                        fraction: float = 0.8) -> float:
    """Actions at the first checkpoint reaching fraction * reference;
    infinity if the curve never gets there."""
    if not curve.checkpoints:
        raise ValueError("empty curve")
    threshold = fraction * reference
    for actions, acc in curve.checkpoints:
        if acc >= threshold:
            return float(actions)
    return math.inf


def write_curves_csv(path, curves: list[ALCurve]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "fold", "actions", "accuracy"])
        for curve in curves:
            for actions, acc in curve.checkpoints:
                writer.writerow([curve.strategy, curve.fold_id, actions,
                                 f"{acc:.6f}"])


def write_summary_csv(path, summary: dict[str, float]) -> None:
    """Per-strategy mean actions-to-threshold table."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "mean_actions_to_threshold"])
        for strategy, value in summary.items():
            writer.writerow([strategy, "inf" if math.isinf(value) else f"{value:.1f}"])
