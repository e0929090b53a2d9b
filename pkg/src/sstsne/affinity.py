"""Perplexity-calibrated high-dimensional pairwise similarities.

Affinities are kept dense: the labeling workflow caps datasets at a few
thousand samples, and a dense matrix keeps the global attraction
normalization exact. A sparse neighbor-truncated path is a possible future
optimization, not implemented here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import check_matrix

_MAX_BETA = 2.0 ** 60
_PERPLEXITY_TOL = 1e-5
_MAX_BISECTIONS = 200


@dataclass(frozen=True)
class AffinityMatrix:
    """Symmetric joint probabilities with zero diagonal summing to 1."""

    p: np.ndarray
    perplexity_used: float

    @property
    def n(self) -> int:
        return self.p.shape[0]


def pairwise_sq_distances(features: np.ndarray,
                          exact_symmetry: bool = True) -> np.ndarray:
    """Squared Euclidean distances via the expansion identity.

    Tiny negative values produced by cancellation are clamped to zero and
    the diagonal is forced to zero exactly. exact_symmetry=False skips the
    extra pass that irons out sub-ulp BLAS asymmetry; per-step consumers
    that only feed the matrix through smooth kernels don't need it.
    """
    x = check_matrix(features, "features")
    sq_norms = np.einsum("ij,ij->i", x, x)
    d2 = x @ x.T
    d2 *= -2.0
    d2 += sq_norms[:, None]
    d2 += sq_norms[None, :]
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    if exact_symmetry:
        d2 = 0.5 * (d2 + d2.T)
    return d2


def _row_probe(d2_row: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    """Effective neighborhood size 2^H and probabilities for one row.

    Distances are shifted by the row minimum before exponentiation; the
    shift cancels under normalization but prevents underflow for outliers.
    """
    shifted = d2_row - d2_row.min()
    w = np.exp(-beta * shifted)
    p = w / w.sum()
    nz = p > 0
    h = -np.sum(p[nz] * np.log2(p[nz]))
    return 2.0 ** h, p


def _calibrate_row(row: np.ndarray, perplexity: float) -> np.ndarray:
    """Bandwidth search for one row: bracket beta by doubling, then bisect.

    2^H is decreasing in beta. Brackets expand up to 2^60 (or down to its
    inverse); bisection runs at most 200 rounds and the best candidate seen
    is kept even when the tolerance is not met.
    """
    beta = 1.0
    perp, p = _row_probe(row, beta)
    best_err, best_p = abs(perp - perplexity), p

    if perp > perplexity:
        lo = beta
        while perp > perplexity and beta < _MAX_BETA:
            lo = beta
            beta *= 2.0
            perp, p = _row_probe(row, beta)
            if abs(perp - perplexity) < best_err:
                best_err, best_p = abs(perp - perplexity), p
        hi = beta
    else:
        hi = beta
        while perp < perplexity and beta > 1.0 / _MAX_BETA:
            hi = beta
            beta /= 2.0
            perp, p = _row_probe(row, beta)
            if abs(perp - perplexity) < best_err:
                best_err, best_p = abs(perp - perplexity), p
        lo = beta

    for _ in range(_MAX_BISECTIONS):
        if best_err <= _PERPLEXITY_TOL:
            break
        beta = 0.5 * (lo + hi)
        perp, p = _row_probe(row, beta)
        if abs(perp - perplexity) < best_err:
            best_err, best_p = abs(perp - perplexity), p
        if perp > perplexity:
            lo = beta
        else:
            hi = beta
    return best_p


def conditional_probs(sq_distances: np.ndarray, perplexity: float = 20.0) -> np.ndarray:
    """Per-row Gaussian conditionals with bandwidth tuned to the perplexity.

    Rows whose off-diagonal distances are all zero cannot be calibrated and
    fall back to a uniform distribution with a warning.
    """
    d2 = np.asarray(sq_distances, dtype=np.float64)
    n = d2.shape[0]
    if not 1.0 < perplexity < n:
        raise ValueError(f"perplexity must lie in (1, {n}), got {perplexity}")
    cond = np.zeros((n, n), dtype=np.float64)
    all_idx = np.arange(n)
    for i in range(n):
        idx = np.concatenate([all_idx[:i], all_idx[i + 1:]])
        row = d2[i, idx]
        if np.all(row == 0.0):
            warnings.warn(f"degenerate distance row {i}: using uniform conditionals")
            cond[i, idx] = 1.0 / (n - 1)
            continue
        cond[i, idx] = _calibrate_row(row, float(perplexity))
    return cond


def symmetrize(conditional: np.ndarray, perplexity: float = float("nan")) -> AffinityMatrix:
    """Joint affinities p_ij = (p_j|i + p_i|j) / 2N; the global sum is 1."""
    c = np.asarray(conditional, dtype=np.float64)
    n = c.shape[0]
    p = (c + c.T) / (2.0 * n)
    np.fill_diagonal(p, 0.0)
    return AffinityMatrix(p=p, perplexity_used=float(perplexity))


def compute_affinities(features: np.ndarray, perplexity: float = 20.0) -> AffinityMatrix:
    """Full pipeline: distances -> calibrated conditionals -> joint affinities."""
    d2 = pairwise_sq_distances(features)
    cond = conditional_probs(d2, perplexity)
    return symmetrize(cond, perplexity)
