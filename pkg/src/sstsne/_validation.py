"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_matrix(x, name: str = "X", dtype=np.float64) -> np.ndarray:
    """Coerce to a 2-D float array with at least one row and column, all finite."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_labels(labels, n: int, n_classes: int | None = None) -> np.ndarray:
    """Coerce to an int label vector of length ``n`` with ids in [0, n_classes)."""
    arr = np.asarray(labels, dtype=np.int64)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise ValueError(f"labels must be a vector of length {n}, got shape {arr.shape}")
    if arr.size and arr.min() < 0:
        raise ValueError("label ids must be non-negative")
    if n_classes is not None and arr.size and arr.max() >= n_classes:
        raise ValueError(f"label id {arr.max()} out of range for {n_classes} classes")
    return arr


def check_seed(seed) -> np.random.Generator:
    """Accept an int seed or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
