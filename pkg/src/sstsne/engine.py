"""Semi-supervised Barnes-Hut t-SNE optimizer.

The gradient splits into attraction and repulsion, 4 * (F_attr - F_rep),
with per-pair priors a_ij and b_ij that fold annotations into the layout:

    F_attr_i = sum_j a_ij (alpha p_ij) t_ij (y_i - y_j) / sum_{k!=l} a_kl p_kl
    F_rep_i  = sum_j b_ij t_ij^2 (y_i - y_j)            / sum_{k!=l} b_kl t_kl

where t_ij = 1 / (1 + ||y_i - y_j||^2). Early exaggeration alpha scales the
numerator p only; the normalizer stays unexaggerated so an unlabeled run
reduces exactly to alpha * sum_j p_ij t_ij (y_i - y_j), i.e. standard
exaggerated t-SNE, and alpha=1 gives the plain semi-supervised gradient.

Unlabeled pairs keep a_ij = 1/N and b_ij = 1. When both ends are labeled,
same-class pairs gain attraction (+ u_i u_j f / N_s), different-class pairs
lose attraction (- u_i u_j f / N_o, clamped at 0) and gain repulsion
(b_ij = 1 + u_i u_j r). N_s and N_o count labeled samples with the same /
a different class than sample i. Point rates u_i ramp from 0 to 1 after a
sample is labeled so fresh annotations do not jolt the layout.

Repulsion between labeled mismatched pairs is computed pair-exactly; only
the b=1 base field goes through the Barnes-Hut tree.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import spatial
from .affinity import AffinityMatrix, compute_affinities, pairwise_sq_distances
from .dataset import Dataset

CHECKPOINT_MAGIC = b"SSTSNE01"
UNLABELED = -1

_GAIN_FLOOR = 0.01
_GAIN_UP = 0.2
_GAIN_DOWN = 0.8


class EngineError(RuntimeError):
    """Non-finite intermediate or a violated normalizer invariant.

    Carries the epoch and offending positions so a failing configuration
    can be replayed.
    """

    def __init__(self, message: str, epoch: int | None = None,
                 positions: np.ndarray | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.positions = positions


@dataclass(frozen=True)
class TsneConfig:
    """Session hyperparameters; defaults follow the reference settings."""

    out_dims: int = 3
    perplexity: float = 20.0
    theta: float = 0.5
    theta_k: float = 0.8
    f: float = 0.01
    r: float = 0.1
    s: int = 200
    ramp_epochs: int = 0
    e_max: int = 1000
    eta: float = 200.0
    alpha_hi: float = 4.0
    alpha_epochs: tuple[int, int] = (100, 250)
    momentum_lo_hi: tuple[float, float] = (0.5, 0.8)
    seed: int = 0
    init_mode: str = "pca"

    def __post_init__(self):
        if self.out_dims not in (2, 3):
            raise ValueError(f"out_dims must be 2 or 3, got {self.out_dims}")
        if self.perplexity <= 1:
            raise ValueError("perplexity must exceed 1")
        if self.theta < 0 or self.theta_k < 0:
            raise ValueError("theta and theta_k must be >= 0")
        if self.f < 0 or self.r < 0:
            raise ValueError("f and r must be >= 0")
        if self.ramp_epochs < 0:
            raise ValueError("ramp_epochs must be >= 0")
        if not 0 <= self.s < self.e_max:
            raise ValueError(f"need 0 <= s < e_max, got s={self.s} e_max={self.e_max}")
        lo, hi = self.alpha_epochs
        if not lo < hi <= self.e_max:
            raise ValueError(f"need alpha_epochs[0] < alpha_epochs[1] <= e_max, got {self.alpha_epochs}")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.init_mode not in ("pca", "random"):
            raise ValueError(f"init_mode must be 'pca' or 'random', got {self.init_mode!r}")


@dataclass
class AnnotationState:
    """Per-sample class assignments and their point learning rates.

    c[i] is the class id or -1 while unlabeled; label_epoch[i] is the epoch
    the label arrived (-1 while unlabeled); u[i] in [0, 1] is 0 until the
    sample is labeled, then follows the ramp in update_point_rates.
    """

    c: np.ndarray
    label_epoch: np.ndarray
    u: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "AnnotationState":
        return cls(c=np.full(n, UNLABELED, dtype=np.int64),
                   label_epoch=np.full(n, -1, dtype=np.int64),
                   u=np.zeros(n, dtype=np.float64))

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.c >= 0

    @property
    def n_labeled(self) -> int:
        return int(np.count_nonzero(self.c >= 0))

    def copy(self) -> "AnnotationState":
        return AnnotationState(self.c.copy(), self.label_epoch.copy(), self.u.copy())


@dataclass
class EmbeddingState:
    """Mutable optimizer state: positions, momentum buffer, gain heuristic."""

    y: np.ndarray
    velocity: np.ndarray
    gains: np.ndarray
    epoch: int
    alpha: float
    momentum: float

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(self.y.copy(), self.velocity.copy(),
                              self.gains.copy(), self.epoch,
                              self.alpha, self.momentum)


def schedules(epoch: int, config: TsneConfig) -> tuple[float, float]:
    """Exaggeration and momentum for an epoch: (alpha_hi, momentum_lo) up to
    the first knee, (1, momentum_hi) from the second, linear between."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    e0, e1 = config.alpha_epochs
    lo, hi = config.momentum_lo_hi
    if epoch <= e0:
        return float(config.alpha_hi), float(lo)
    if epoch >= e1:
        return 1.0, float(hi)
    frac = (epoch - e0) / (e1 - e0)
    return (float(config.alpha_hi + frac * (1.0 - config.alpha_hi)),
            float(lo + frac * (hi - lo)))


def init_embedding(dataset, config: TsneConfig) -> EmbeddingState:
    """Initial positions: top principal-component scores rescaled to a
    per-axis standard deviation of 1e-2, or seeded 1e-4 normals."""
    features = dataset.features if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    n, dim = features.shape
    d = config.out_dims
    rng = np.random.default_rng(config.seed)

    mode = config.init_mode
    if mode == "pca" and dim < d:
        warnings.warn(f"pca init needs at least {d} feature dimensions, got {dim}; "
                      "falling back to random init")
        mode = "random"

    if mode == "pca":
        centered = features - features.mean(axis=0)
        u_mat, sing, _ = np.linalg.svd(centered, full_matrices=False)
        scores = u_mat[:, :d] * sing[:d]
        std = scores.std(axis=0)
        y = np.empty((n, d), dtype=np.float64)
        for axis in range(d):
            if std[axis] > 1e-12:
                y[:, axis] = scores[:, axis] * (1e-2 / std[axis])
            else:
                # Degenerate component: no variance to rescale, jitter instead.
                y[:, axis] = rng.normal(0.0, 1e-4, size=n)
    else:
        y = rng.normal(0.0, 1e-4, size=(n, d))

    alpha, momentum = schedules(0, config)
    return EmbeddingState(y=y,
                          velocity=np.zeros((n, d), dtype=np.float64),
                          gains=np.ones((n, d), dtype=np.float64),
                          epoch=0, alpha=alpha, momentum=momentum)


def update_point_rates(annotations: AnnotationState, epoch: int,
                       ramp_epochs: int) -> AnnotationState:
    """Recompute u in place: 0 for unlabeled samples, otherwise
    min(1, (epoch - label_epoch + 1) / ramp_epochs), with ramp 0 meaning
    an immediate jump to 1."""
    labeled = annotations.c >= 0
    annotations.u.fill(0.0)
    if ramp_epochs <= 0:
        annotations.u[labeled] = 1.0
    else:
        age = (epoch - annotations.label_epoch[labeled] + 1) / float(ramp_epochs)
        annotations.u[labeled] = np.clip(age, 0.0, 1.0)
    return annotations


def labeled_class_counts(annotations: AnnotationState) -> tuple[np.ndarray, int]:
    """Per-class labeled sample counts and the labeled total."""
    labeled = annotations.c[annotations.c >= 0]
    if labeled.size == 0:
        return np.zeros(0, dtype=np.int64), 0
    return np.bincount(labeled), int(labeled.size)


def attraction_prior(i: int, j: int, annotations: AnnotationState, f: float,
                     class_counts: tuple[np.ndarray, int]) -> float:
    """a_ij: 1/N unless both ends are labeled; then same-class pairs gain
    u_i u_j f / N_s and different-class pairs lose u_i u_j f / N_o, clamped
    at 0. A branch whose divisor would be 0 leaves the base value."""
    n = annotations.n
    base = 1.0 / n
    ci = int(annotations.c[i])
    cj = int(annotations.c[j])
    if ci < 0 or cj < 0:
        return base
    counts, total = class_counts
    uu = float(annotations.u[i] * annotations.u[j])
    if ci == cj:
        n_s = int(counts[ci]) if ci < counts.size else 0
        if n_s == 0:
            return base
        return base + uu * f / n_s
    n_o = total - (int(counts[ci]) if ci < counts.size else 0)
    if n_o == 0:
        return base
    return max(0.0, base - uu * f / n_o)


def repulsion_prior(i: int, j: int, annotations: AnnotationState, r: float) -> float:
    """b_ij: 1 + u_i u_j r for labeled pairs with differing classes, else 1."""
    ci = int(annotations.c[i])
    cj = int(annotations.c[j])
    if ci >= 0 and cj >= 0 and ci != cj:
        return 1.0 + float(annotations.u[i] * annotations.u[j]) * r
    return 1.0


def _labeled_prior_blocks(annotations: AnnotationState, f: float, r: float,
                          use_f: bool, use_r: bool):
    """Dense prior adjustments restricted to the labeled x labeled block.

    Returns (lab, da, wr) where lab indexes labeled samples, da is the
    labeled-block a_ij minus the 1/N base (None when attraction is
    unadjusted) and wr = u_i u_j r masked to mismatched pairs (None when
    repulsion is unadjusted).
    """
    lab = np.flatnonzero(annotations.c >= 0)
    cl = annotations.c[lab]
    ul = annotations.u[lab]
    counts = np.bincount(cl)
    total = lab.size
    same = cl[:, None] == cl[None, :]
    uu = ul[:, None] * ul[None, :]

    da = None
    if use_f:
        base = 1.0 / annotations.n
        n_s = counts[cl].astype(np.float64)
        n_o = (total - counts[cl]).astype(np.float64)
        # Rows with n_o = 0 have no mismatched labeled partner, so the
        # guarded divisor below is never read through the mask.
        a_same = base + uu * f / n_s[:, None]
        a_diff = np.maximum(base - uu * f / np.maximum(n_o, 1.0)[:, None], 0.0)
        da = np.where(same, a_same, a_diff) - base

    wr = None
    if use_r:
        wr = np.where(same, 0.0, uu * r)

    return lab, da, wr


def gradient(y: np.ndarray, affinities: AffinityMatrix,
             annotations: AnnotationState, config: TsneConfig,
             epoch: int) -> np.ndarray:
    """Force matrix 4 * (F_attr - F_rep) at the given epoch.

    Attraction is evaluated densely over all pairs with p_ij > 0; base
    repulsion runs through the Barnes-Hut tree at config.theta and labeled
    mismatched pairs add pair-exact corrections to both the numerator and
    the normalizer. Before epoch s annotations exert no force at all.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    p = affinities.p
    n, d = y.shape
    if p.shape != (n, n):
        raise ValueError(f"affinities are {p.shape}, embedding has {n} rows")

    alpha, _ = schedules(epoch, config)
    labels_active = epoch >= config.s and annotations.n_labeled > 0
    use_f = labels_active and config.f > 0.0
    use_r = labels_active and config.r > 0.0

    sq = pairwise_sq_distances(y, exact_symmetry=False)
    t = 1.0 / (1.0 + sq)
    np.fill_diagonal(t, 0.0)

    base = 1.0 / n
    pt = p * t
    w = (alpha * base) * pt
    z_attr = base * float(p.sum())

    lab = da = wr = None
    if use_f or use_r:
        lab, da, wr = _labeled_prior_blocks(annotations, config.f, config.r,
                                            use_f, use_r)
    if use_f:
        block = np.ix_(lab, lab)
        w[block] += alpha * da * pt[block]
        z_attr += float((da * p[block]).sum())
    if z_attr <= 0.0:
        raise EngineError(f"attraction normalizer {z_attr} is not positive at epoch {epoch}",
                          epoch=epoch, positions=y.copy())
    f_attr = (w.sum(axis=1)[:, None] * y - w @ y) / z_attr

    tree = spatial.build(y)
    rep_num, z_rep = spatial.repulsion_forces(tree, config.theta)
    if use_r:
        block = np.ix_(lab, lab)
        tb = t[block]
        corr = wr * tb * tb
        y_lab = y[lab]
        rep_num[lab] += corr.sum(axis=1)[:, None] * y_lab - corr @ y_lab
        z_rep += float((wr * tb).sum())
    if z_rep > 0.0:
        f_rep = rep_num / z_rep
    else:
        f_rep = np.zeros_like(rep_num)

    grad = 4.0 * (f_attr - f_rep)
    if not np.all(np.isfinite(grad)):
        raise EngineError(f"non-finite gradient at epoch {epoch}",
                          epoch=epoch, positions=y.copy())
    return grad


def step(state: EmbeddingState, affinities: AffinityMatrix,
         annotations: AnnotationState, config: TsneConfig) -> EmbeddingState:
    """Advance one epoch in place: refresh point rates, apply the scheduled
    gradient with per-component adaptive gains and momentum, recenter."""
    if state.epoch >= config.e_max:
        raise ValueError(f"epoch {state.epoch} already at e_max {config.e_max}")
    update_point_rates(annotations, state.epoch, config.ramp_epochs)
    alpha, momentum = schedules(state.epoch, config)
    grad = gradient(state.y, affinities, annotations, config, state.epoch)

    disagree = np.sign(grad) != np.sign(state.velocity)
    state.gains = np.where(disagree, state.gains + _GAIN_UP, state.gains * _GAIN_DOWN)
    np.maximum(state.gains, _GAIN_FLOOR, out=state.gains)

    state.velocity = momentum * state.velocity - config.eta * state.gains * grad
    state.y = state.y + state.velocity
    state.y -= state.y.mean(axis=0)

    if not np.all(np.isfinite(state.y)):
        raise EngineError(f"non-finite positions after epoch {state.epoch}",
                          epoch=state.epoch, positions=state.y.copy())

    state.alpha = alpha
    state.momentum = momentum
    state.epoch += 1
    return state


def kl_divergence(y: np.ndarray, affinities: AffinityMatrix) -> float:
    """Exact KL divergence sum_{i!=j} p log(p/q) with q = t / sum t."""
    y = np.asarray(y, dtype=np.float64)
    p = affinities.p
    t = 1.0 / (1.0 + pairwise_sq_distances(y))
    np.fill_diagonal(t, 0.0)
    q = t / t.sum()
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def apply_label(annotations: AnnotationState, i: int, class_id: int,
                epoch: int, force: bool = False) -> AnnotationState:
    """Assign class_id to sample i at the given epoch. Re-labeling an
    already annotated sample requires force; u stays untouched until the
    next update_point_rates call."""
    if class_id < 0:
        raise ValueError(f"class_id must be >= 0, got {class_id}")
    if not 0 <= i < annotations.n:
        raise ValueError(f"sample index {i} out of range for n={annotations.n}")
    if annotations.c[i] >= 0 and not force:
        raise ValueError(f"sample {i} already labeled as {annotations.c[i]}; "
                         "pass force=True to overwrite")
    annotations.c[i] = class_id
    annotations.label_epoch[i] = epoch
    return annotations


def save_checkpoint(path, state: EmbeddingState,
                    annotations: AnnotationState) -> None:
    """Write a versioned binary checkpoint: magic, (N, d, epoch) u32 LE,
    y / velocity / gains as f64 LE, then (index, class, label_epoch) rows
    for every labeled sample."""
    n, d = state.y.shape
    lab = np.flatnonzero(annotations.c >= 0)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<III", n, d, state.epoch))
        fh.write(np.ascontiguousarray(state.y, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.velocity, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.gains, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", lab.size))
        for i in lab:
            fh.write(struct.pack("<Iii", int(i), int(annotations.c[i]),
                                 int(annotations.label_epoch[i])))


def load_checkpoint(path, config: TsneConfig | None = None
                    ) -> tuple[EmbeddingState, AnnotationState]:
    """Read a checkpoint written by save_checkpoint. Pass the session config
    to restore schedule-derived fields (alpha, momentum, u); defaults are
    used otherwise."""
    cfg = config if config is not None else TsneConfig()
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        n, d, epoch = struct.unpack("<III", fh.read(12))
        block = n * d * 8

        def read_block(name):
            raw = fh.read(block)
            if len(raw) != block:
                raise ValueError(f"truncated checkpoint while reading {name}")
            return np.frombuffer(raw, dtype="<f8").reshape(n, d).astype(np.float64)

        y = read_block("positions")
        velocity = read_block("velocity")
        gains = read_block("gains")
        (count,) = struct.unpack("<I", fh.read(4))
        annotations = AnnotationState.empty(n)
        for _ in range(count):
            idx, class_id, label_epoch = struct.unpack("<Iii", fh.read(12))
            if not 0 <= idx < n:
                raise ValueError(f"checkpoint annotation index {idx} out of range")
            annotations.c[idx] = class_id
            annotations.label_epoch[idx] = label_epoch

    alpha, momentum = schedules(epoch, cfg)
    state = EmbeddingState(y=y, velocity=velocity, gains=gains,
                           epoch=int(epoch), alpha=alpha, momentum=momentum)
    update_point_rates(annotations, int(epoch), cfg.ramp_epochs)
    return state, annotations


class Engine:
    """One optimization session: affinities, embedding and annotations.

    Convenience wrapper over the module-level operations for callers that
    drive a session end to end (service, CLI, emulator harness). A single
    writer must own the instance; snapshots for observers should copy y at
    epoch boundaries.
    """

    def __init__(self, dataset, config: TsneConfig,
                 affinities: AffinityMatrix | None = None):
        if not isinstance(dataset, Dataset):
            dataset = Dataset(features=np.asarray(dataset, dtype=np.float64))
        self.dataset = dataset
        self.config = config
        self.affinities = affinities if affinities is not None else \
            compute_affinities(dataset.features, config.perplexity)
        self.state = init_embedding(dataset, config)
        self.annotations = AnnotationState.empty(dataset.n)

    @property
    def epoch(self) -> int:
        return self.state.epoch

    @property
    def n(self) -> int:
        return self.dataset.n

    def can_step(self) -> bool:
        return self.state.epoch < self.config.e_max

    def step(self, epochs: int = 1) -> EmbeddingState:
        for _ in range(epochs):
            if not self.can_step():
                break
            step(self.state, self.affinities, self.annotations, self.config)
        return self.state

    def label(self, i: int, class_id: int, force: bool = False) -> None:
        apply_label(self.annotations, i, class_id, self.state.epoch, force=force)

    def kl(self) -> float:
        return kl_divergence(self.state.y, self.affinities)

    def save(self, path) -> None:
        save_checkpoint(path, self.state, self.annotations)

    def restore(self, path) -> None:
        state, annotations = load_checkpoint(path, self.config)
        if state.y.shape != (self.dataset.n, self.config.out_dims):
            raise ValueError("checkpoint shape does not match this session's dataset/config")
        self.state = state
        self.annotations = annotations
