"""Attention affinities: construction, head/layer averaging, over-smoothing diagnostics."""

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .tensor import PROB_ATOL, as_tensor, check_distribution, matmul, softmax

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
DEFAULT_SAMPLE_PAIRS = 2048


@dataclass(frozen=True)
class AffinityStack:
    logits: np.ndarray  # L x heads x N x N raw scaled dot products
    d_k: int = 1

    def __post_init__(self):
        if self.logits.ndim != 4 or self.logits.shape[2] != self.logits.shape[3]:
            raise ArgumentError(
                f"affinity logits must be L x heads x N x N, got {self.logits.shape}"
            )
        if 0 in self.logits.shape:
            raise ArgumentError(f"affinity stack has an empty extent: {self.logits.shape}")

    @property
    def num_layers(self):
        return self.logits.shape[0]

    @property
    def num_tokens(self):
        return self.logits.shape[2]

    def layer_probs(self):
        """Row-stochastic head-averaged affinity for every layer."""
        return [head_average(self.logits[l]) for l in range(self.num_layers)]

    def head_mean_logits(self):
        """Raw logits averaged over heads, L x N x N."""
        return self.logits.mean(axis=1)


def check_row_stochastic(aff, atol=PROB_ATOL):
    aff = np.asarray(aff, dtype=np.float64)
    if aff.ndim != 2 or aff.shape[0] != aff.shape[1]:
        raise ArgumentError(f"affinity must be square, got {aff.shape}")
    if np.any(aff < 0) or np.any(aff > 1) or not np.all(np.isfinite(aff)):
        raise ArgumentError("affinity entries must lie in [0, 1]")
    err = np.max(np.abs(aff.sum(axis=1) - 1.0))
    if err > atol:
        raise ArgumentError(f"affinity rows deviate from 1 by {err:.3g}")
    return aff


def build_affinity_logits(q, k):
    q = as_tensor(q, "queries")
    k = as_tensor(k, "keys")
    if q.ndim != 2 or k.ndim != 2 or q.shape != k.shape or q.shape[1] < 1:
        raise ArgumentError(f"queries {q.shape} and keys {k.shape} must both be N x D_k")
    return matmul(q, k.T) / np.sqrt(q.shape[1])


def head_average(logits):
    """Row softmax per head, then the mean over heads."""
    logits = as_tensor(logits, "logits")
    if logits.ndim == 2:
        logits = logits[None]
    if logits.ndim != 3 or logits.shape[0] < 1:
        raise ArgumentError(f"expected heads x N x N logits, got {logits.shape}")
    return softmax(logits, axis=-1).mean(axis=0)


def layer_average(layers):
    if len(layers) == 0:
        raise ArgumentError("layer_average needs at least one layer")
    shapes = {np.shape(a) for a in layers}
    if len(shapes) != 1:
        raise ArgumentError(f"layers have mismatched shapes: {sorted(shapes)}")
    return np.mean(np.stack([np.asarray(a, dtype=np.float64) for a in layers]), axis=0)


def hellinger(p, q):
    p = check_distribution(p, "p")
    q = check_distribution(q, "q")
    if p.shape != q.shape:
        raise ArgumentError(f"length mismatch: {p.size} vs {q.size}")
    d = np.sqrt(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)) * _INV_SQRT2
    return float(min(d, 1.0))


def _row_pairs(n, sample_pairs, seed):
    if n * (n - 1) // 2 <= sample_pairs:
        i, j = np.triu_indices(n, k=1)
        return i, j
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=sample_pairs)
    # offset in [1, n) guarantees j != i
    j = (i + rng.integers(1, n, size=sample_pairs)) % n
    return i, j


def oversmoothing_score(aff, sample_pairs=DEFAULT_SAMPLE_PAIRS, seed=0):
    """Mean Hellinger distance between distinct rows of one affinity matrix.

    Exhaustive over all row pairs when there are at most ``sample_pairs`` of
    them, otherwise a seeded sample. Lower means more collapsed rows.
    """
    aff = check_row_stochastic(aff)
    n = aff.shape[0]
    if n < 2:
        raise ArgumentError("need at least two rows")
    if sample_pairs < 1:
        raise ArgumentError("sample_pairs must be >= 1")
    i, j = _row_pairs(n, sample_pairs, seed)
    root = np.sqrt(aff)
    d = np.sqrt(np.sum((root[i] - root[j]) ** 2, axis=1)) * _INV_SQRT2
    return float(np.mean(np.minimum(d, 1.0)))


def column_concentration(aff):
    """Largest column mass divided by N; 1/N for doubly stochastic, 1 when every row hits one column."""
    aff = np.asarray(aff, dtype=np.float64)
    return float(np.max(aff.sum(axis=0)) / aff.shape[0])
