"""Sigmoid-gated affinity loss, its gradient, and a plain descent loop over logits."""

import math
from dataclasses import dataclass

import numpy as np

from .affinity import AffinityStack
from .errors import ArgumentError
from .tensor import as_tensor


@dataclass(frozen=True)
class LossReport:
    per_layer: np.ndarray
    total: float
    n_pos: np.ndarray
    n_neg: np.ndarray
    grads: list  # per-layer gradient already scaled by the supervision weight


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _masks(labels, shape):
    labels = np.asarray(labels)
    if labels.shape != shape:
        raise ArgumentError(f"labels shape {labels.shape} != logits shape {shape}")
    return labels == 1, labels == 0


def affinity_loss(logits, labels):
    """Loss and gradient w.r.t. raw logits for one layer.

    Positive pairs are pushed towards sigmoid 1, negatives towards 0, each
    group averaged over its own count. A group with no pairs contributes
    nothing.
    """
    logits = as_tensor(logits, "logits")
    pos, neg = _masks(labels, logits.shape)
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    s = sigmoid(logits)
    slope = s * (1.0 - s)
    loss = 0.0
    grad = np.zeros_like(logits)
    if n_pos:
        loss += float(np.sum(1.0 - s[pos])) / n_pos
        grad[pos] = -slope[pos] / n_pos
    if n_neg:
        loss += float(np.sum(s[neg])) / n_neg
        grad[neg] = slope[neg] / n_neg
    return loss, grad


def pair_counts(labels):
    labels = np.asarray(labels)
    return int(np.sum(labels == 1)), int(np.sum(labels == 0))


def aggregate_loss(per_layer, weights, labels=None):
    """Weight each layer's (loss, grad) by ``weights.supervise``."""
    supervise = np.asarray(getattr(weights, "supervise", weights), dtype=np.float64)
    if len(per_layer) != len(supervise):
        raise ArgumentError(f"{len(per_layer)} layer losses for {len(supervise)} weights")
    losses = np.array([lg[0] for lg in per_layer], dtype=np.float64)
    total = math.fsum((supervise * losses).tolist())
    grads = [w * g for w, (_, g) in zip(supervise, per_layer)]
    n_pos, n_neg = pair_counts(labels) if labels is not None else (0, 0)
    L = len(per_layer)
    return LossReport(
        per_layer=losses,
        total=total,
        n_pos=np.full(L, n_pos),
        n_neg=np.full(L, n_neg),
        grads=grads,
    )


def stack_loss(stack, labels, weights):
    """Aggregated loss of an affinity stack on its head-averaged raw logits."""
    mean_logits = stack.head_mean_logits()
    per_layer = [affinity_loss(mean_logits[l], labels) for l in range(stack.num_layers)]
    return aggregate_loss(per_layer, weights, labels)


def pair_step_scale(labels):
    """Per-entry factor that turns the count-averaged gradient into a per-pair gradient."""
    labels = np.asarray(labels)
    n_pos, n_neg = pair_counts(labels)
    scale = np.zeros(labels.shape)
    scale[labels == 1] = n_pos
    scale[labels == 0] = n_neg
    return scale


def optimize_logits(stack, labels, weights, step_size=0.5, steps=200, pair_scaled=True):
    """Gradient descent on each layer's head-averaged logits.

    The same update is added to every head of a layer, so the head mean
    moves by exactly one descent step. With ``pair_scaled`` (default) the
    step is taken per pair: the gradient on a positive (negative) pair is
    multiplied by the number of positive (negative) pairs, which makes
    ``step_size`` independent of the token count. The scaling is a fixed
    diagonal rescaling, not an adaptive one. With ``pair_scaled=False`` the
    raw count-averaged gradient is used.

    Returns the updated stack and the aggregated loss before each step and
    after the last one (``steps + 1`` values).
    """
    if step_size <= 0:
        raise ArgumentError("step_size must be positive")
    if steps < 0:
        raise ArgumentError("steps must be >= 0")
    labels = np.asarray(labels)
    if labels.shape != stack.logits.shape[2:]:
        raise ArgumentError(
            f"labels shape {labels.shape} != token grid {stack.logits.shape[2:]}"
        )
    supervise = np.asarray(weights.supervise, dtype=np.float64)
    if supervise.size != stack.num_layers:
        raise ArgumentError(f"{supervise.size} weights for {stack.num_layers} layers")
    scale = pair_step_scale(labels) if pair_scaled else 1.0

    logits = stack.logits.copy()
    current = AffinityStack(logits, stack.d_k)
    trace = []
    for _ in range(steps):
        report = stack_loss(current, labels, weights)
        trace.append(report.total)
        for l, g in enumerate(report.grads):
            if supervise[l] == 0:
                continue
            logits[l] -= (step_size * scale * g)[None]
        current = AffinityStack(logits.copy(), stack.d_k)
    trace.append(stack_loss(current, labels, weights).total)
    return current, trace


def finite_difference_grad(logits, labels, h=1e-6):
    """Central differences of ``affinity_loss`` w.r.t. every logit."""
    logits = np.array(logits, dtype=np.float64)
    fd = np.zeros_like(logits)
    flat, out = logits.reshape(-1), fd.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        up, _ = affinity_loss(logits, labels)
        flat[idx] = orig - h
        down, _ = affinity_loss(logits, labels)
        flat[idx] = orig
        out[idx] = (up - down) / (2.0 * h)
    return fd


def max_relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.abs(a), np.abs(b))
    rel = np.divide(np.abs(a - b), denom, out=np.zeros_like(denom), where=denom > 0)
    return float(rel.max()) if rel.size else 0.0


def random_instance(seed, size):
    """Standard-normal logits and random {1, 0, 255} pair labels, size x size."""
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(size, size))
    labels = rng.choice(np.array([1, 0, 255], dtype=np.uint8), size=(size, size), p=[0.4, 0.4, 0.2])
    return logits, labels


def gradient_check(seed=0, size=16, h=1e-6):
    if size < 2:
        raise ArgumentError("gradcheck size must be >= 2")
    logits, labels = random_instance(seed, size)
    _, grad = affinity_loss(logits, labels)
    return max_relative_error(grad, finite_difference_grad(logits, labels, h))
