"""Feature/label ingestion, synthetic data generation, and split utilities.

Features are exchanged as headerless tab-separated text (one row per
sample) so files drop straight into embedding-projector style tooling.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_labels, check_matrix, check_seed


class DataError(ValueError):
    """Raised for malformed feature or label files."""


@dataclass(frozen=True)
class Dataset:
    """A feature matrix plus optional ground-truth labels.

    ``true_labels`` are small integer ids indexing ``class_names``. They are
    consumed only by the annotation emulator and the evaluation metrics; the
    embedding engine never reads them.
    """

    features: np.ndarray
    true_labels: np.ndarray | None = None
    class_names: tuple[str, ...] = ()
    name: str = "dataset"

    def __post_init__(self):
        feats = check_matrix(self.features, "features")
        object.__setattr__(self, "features", feats)
        if self.true_labels is not None:
            labels = check_labels(self.true_labels, self.n, len(self.class_names) or None)
            object.__setattr__(self, "true_labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        labels = self.true_labels[idx] if self.true_labels is not None else None
        return Dataset(self.features[idx], labels, self.class_names,
                       name or self.name)


@dataclass(frozen=True)
class FoldSplit:
    """One train/validation partition of a k-fold scheme."""

    train_indices: np.ndarray
    validation_indices: np.ndarray
    fold_id: int

    def __post_init__(self):
        if np.intersect1d(self.train_indices, self.validation_indices).size:
            raise ValueError("train and validation indices overlap")


def load_features(path: str | os.PathLike) -> Dataset:
    """Load a headerless TSV of decimal feature rows.

    Rejects ragged rows (reporting the 1-based row number), non-numeric
    tokens, and empty files.
    """
    rows = []
    width = None
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            tokens = line.split("\t")
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise DataError(f"ragged row {lineno}: expected {width} columns, got {len(tokens)}")
            try:
                rows.append([float(t) for t in tokens])
            except ValueError as exc:
                raise DataError(f"non-numeric token in row {lineno}: {exc}") from exc
    if not rows:
        raise DataError(f"feature file {path} is empty")
    feats = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(feats)):
        raise DataError("feature file contains non-finite values")
    return Dataset(feats, name=os.path.splitext(os.path.basename(path))[0])


def load_labels(path: str | os.PathLike, n_expected: int) -> tuple[np.ndarray, tuple[str, ...]]:
    """Load one label token per line; ids assigned in first-appearance order."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.strip() for line in fh if line.strip() != ""]
    except OSError as exc:
        raise DataError(f"cannot read label file {path}: {exc}") from exc
    if len(tokens) != n_expected:
        raise DataError(f"label count mismatch: expected {n_expected} lines, got {len(tokens)}")
    names: list[str] = []
    mapping: dict[str, int] = {}
    ids = np.empty(len(tokens), dtype=np.int64)
    for i, tok in enumerate(tokens):
        if tok not in mapping:
            mapping[tok] = len(names)
            names.append(tok)
        ids[i] = mapping[tok]
    return ids, tuple(names)


def load_dataset(features_path, labels_path=None, name: str | None = None) -> Dataset:
    """Convenience loader pairing a feature TSV with an optional label file."""
    ds = load_features(features_path)
    if labels_path is None:
        return ds if name is None else Dataset(ds.features, name=name)
    ids, names = load_labels(labels_path, ds.n)
    return Dataset(ds.features, ids, names, name or ds.name)


def stratified_subsample(dataset: Dataset, max_n: int, seed: int = 0) -> Dataset:
    """Cap dataset size with per-class quotas proportional to class frequency.

    Quotas use largest-remainder rounding; any residual mismatch against
    ``max_n`` is settled deterministically by the seeded shuffle order.
    Returns the dataset unchanged when it already fits.
    """
    if dataset.true_labels is None:
        raise ValueError("stratified_subsample requires labels")
    k = dataset.n_classes
    if max_n < k:
        raise ValueError(f"max_n={max_n} is smaller than the class count {k}")
    if dataset.n <= max_n:
        return dataset
    rng = check_seed(seed)
    labels = dataset.true_labels
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    exact = counts * (max_n / dataset.n)
    quota = np.floor(exact).astype(np.int64)
    remainder = exact - quota
    short = max_n - int(quota.sum())
    # Largest remainders get the leftover slots; ties broken by class id.
    order = np.lexsort((np.arange(k), -remainder))
    for cls in order[:short]:
        quota[cls] += 1
    # Guard against zero-quota classes; steal from the largest quota.
    while np.any((quota == 0) & (counts > 0)):
        needy = int(np.argmax((quota == 0) & (counts > 0)))
        donor = int(np.argmax(quota))
        quota[donor] -= 1
        quota[needy] += 1
    picked = []
    for cls in range(k):
        members = np.flatnonzero(labels == cls)
        take = min(int(quota[cls]), members.size)
        chosen = rng.permutation(members)[:take]
        picked.append(chosen)
    idx = np.sort(np.concatenate(picked))
    return dataset.subset(idx, name=f"{dataset.name}[{max_n}]")


def make_synthetic_gaussians(k_classes: int, n_per_class: int, dim: int,
                             separation: float = 10.0, noise: float = 1.0,
                             seed: int = 0, name: str = "synthetic") -> Dataset:
    """Isotropic Gaussian blobs with centers at pairwise distance >= separation."""
    if k_classes < 2:
        raise ValueError("k_classes must be >= 2")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    rng = check_seed(seed)
    centers = rng.standard_normal((k_classes, dim))
    # Rescale so the closest pair of centers sits exactly at `separation`.
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    np.fill_diagonal(dist, np.inf)
    min_dist = dist.min()
    if min_dist <= 0:
        # Astronomically unlikely for a continuous RNG; regenerate defensively.
        return make_synthetic_gaussians(k_classes, n_per_class, dim, separation,
                                        noise, seed + 1, name)
    centers *= separation / min_dist
    feats = np.repeat(centers, n_per_class, axis=0)
    feats = feats + noise * rng.standard_normal(feats.shape)
    labels = np.repeat(np.arange(k_classes), n_per_class)
    names = tuple(f"class_{c}" for c in range(k_classes))
    return Dataset(feats, labels, names, name)


def kfold_split(n: int, k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Shuffled k-fold partition; validation block sizes differ by at most 1."""
    if n < k:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    rng = check_seed(seed)
    perm = rng.permutation(n)
    blocks = np.array_split(perm, k)
    folds = []
    for fold_id, block in enumerate(blocks):
        mask = np.ones(n, dtype=bool)
        mask[block] = False
        folds.append(FoldSplit(train_indices=np.flatnonzero(mask),
                               validation_indices=np.sort(block),
                               fold_id=fold_id))
    return folds


def write_features_tsv(features: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(features, dtype=np.float64), delimiter="\t", fmt="%.10g")


def write_labels_tsv(labels, class_names, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(f"{class_names[int(lab)]}\n")
