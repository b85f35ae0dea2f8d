"""Dense float64 primitives shared by the rest of the package.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Functions here
never mutate their inputs.
"""

import numpy as np

from .errors import ArgumentError

PROB_ATOL = 1e-9


def as_tensor(x, name="tensor"):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{name} contains non-finite values")
    return arr


def softmax(x, axis=-1):
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        raise ArgumentError("softmax needs at least one axis")
    if not -x.ndim <= axis < x.ndim:
        raise ArgumentError(f"axis {axis} out of range for {x.ndim}-d input")
    if x.shape[axis] < 1:
        raise ArgumentError("softmax over an empty axis")
    z = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def minmax_normalize(x):
    """Scale ``x`` to [0, 1]; constant input maps to all zeros."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    lo, hi = np.min(x), np.max(x)
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def check_distribution(p, name="p", atol=PROB_ATOL):
    p = np.asarray(p, dtype=np.float64).ravel()
    if p.size == 0:
        raise ArgumentError(f"{name} is empty")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ArgumentError(f"{name} must be finite and nonnegative")
    total = np.sum(p)
    if abs(total - 1.0) > atol:
        raise ArgumentError(f"{name} sums to {total!r}, expected 1")
    return p


def entropy(p):
    """Shannon entropy in nats with 0 * ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64).ravel()
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def normalized_entropy(p):
    """Entropy of a probability vector divided by ln(len(p)); lies in [0, 1]."""
    p = check_distribution(p)
    if p.size < 2:
        raise ArgumentError("normalized entropy needs at least 2 outcomes")
    h = entropy(p) / np.log(p.size)
    return float(min(max(h, 0.0), 1.0))


def matmul(a, b):
    """Matrix product that does not go through BLAS.

    ``einsum`` without path optimisation runs numpy's own loops, so the
    result is bit-identical regardless of BLAS threading.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ArgumentError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return np.einsum("ik,kj->ij", a, b, optimize=False)
