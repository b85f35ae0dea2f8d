import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aream.affinity import AffinityStack
from aream.errors import ArgumentError
from aream.loss import (
    affinity_loss,
    aggregate_loss,
    finite_difference_grad,
    gradient_check,
    max_relative_error,
    optimize_logits,
    pair_step_scale,
    random_instance,
    sigmoid,
    stack_loss,
)
from aream.reactivation import LayerWeights, weights_from_raw

LABELS = np.array([[1, 0], [0, 1]], dtype=np.uint8)


def oracle_loss(logits, labels):
    pos = [1 - 1 / (1 + math.exp(-x)) for x, y in zip(logits.ravel(), labels.ravel()) if y == 1]
    neg = [1 / (1 + math.exp(-x)) for x, y in zip(logits.ravel(), labels.ravel()) if y == 0]
    out = 0.0
    if pos:
        out += math.fsum(pos) / len(pos)
    if neg:
        out += math.fsum(neg) / len(neg)
    return out


def test_sigmoid_stable():
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])


def test_zero_logits_give_one():
    loss, _ = affinity_loss(np.zeros((2, 2)), LABELS)
    assert loss == 1.0


def test_saturated_logits():
    logits = np.array([[40.0, -40.0], [-40.0, 40.0]])
    loss, grad = affinity_loss(logits, LABELS)
    assert 0.0 <= loss < 1e-15
    assert np.abs(grad).max() < 1e-15
    bad, _ = affinity_loss(-logits, LABELS)
    assert bad == pytest.approx(2.0, abs=1e-15)


def test_matches_oracle(rng):
    for seed in range(10):
        logits, labels = random_instance(seed, 6)
        assert affinity_loss(logits, labels)[0] == pytest.approx(oracle_loss(logits, labels),
                                                                 abs=1e-12)


def test_empty_group_dropped():
    only_pos = np.array([[1, 255], [255, 1]], dtype=np.uint8)
    loss, grad = affinity_loss(np.zeros((2, 2)), only_pos)
    assert loss == 0.5
    np.testing.assert_array_equal(grad, [[-0.125, 0.0], [0.0, -0.125]])
    loss, grad = affinity_loss(np.zeros((2, 2)), np.full((2, 2), 255, dtype=np.uint8))
    assert loss == 0.0
    np.testing.assert_array_equal(grad, 0.0)


def test_gradient_finite_difference():
    for seed in range(5):
        assert gradient_check(seed, size=8) < 1e-5


def test_gradient_zero_on_ignored_pairs():
    logits, labels = random_instance(3, 10)
    _, grad = affinity_loss(logits, labels)
    np.testing.assert_array_equal(grad[labels == 255], 0.0)
    assert np.all(grad[labels == 1] < 0) and np.all(grad[labels == 0] > 0)


def test_max_relative_error():
    assert max_relative_error([0.0, 1.0], [0.0, 1.0]) == 0.0
    assert max_relative_error([1.0], [0.5]) == 0.5
    assert max_relative_error([], []) == 0.0


def test_gradient_check_size_validation():
    with pytest.raises(ArgumentError):
        gradient_check(size=1)


def test_shape_mismatch():
    with pytest.raises(ArgumentError):
        affinity_loss(np.zeros((2, 2)), np.zeros((3, 3), dtype=np.uint8))


def test_aggregate_example():
    g = np.zeros((2, 2))
    rep = aggregate_loss([(0.2, g), (0.6, g)], np.array([0.5, 0.5]))
    assert rep.total == pytest.approx(0.4, abs=1e-15)
    rep = aggregate_loss([(0.2, g), (0.6, g)], weights_from_raw([1.0, 0.0]))
    assert rep.total == pytest.approx(0.6, abs=1e-15)
    with pytest.raises(ArgumentError):
        aggregate_loss([(0.2, g)], np.array([0.5, 0.5]))


def test_pair_step_scale():
    labels = np.array([[1, 0, 255], [1, 1, 0]], dtype=np.uint8)
    np.testing.assert_array_equal(pair_step_scale(labels), [[3, 2, 0], [3, 3, 2]])


def make_stack(rng, layers=3, heads=2, n=6):
    return AffinityStack(rng.normal(size=(layers, heads, n, n)))


def test_optimize_zero_steps(rng):
    stack = make_stack(rng)
    _, labels = random_instance(0, 6)
    out, trace = optimize_logits(stack, labels, LayerWeights.uniform(3), steps=0)
    np.testing.assert_array_equal(out.logits, stack.logits)
    assert trace == [stack_loss(stack, labels, LayerWeights.uniform(3)).total]


def test_optimize_no_supervision(rng):
    stack = make_stack(rng)
    _, labels = random_instance(1, 6)
    w = LayerWeights.uniform(3).masked([False, False, False])
    out, trace = optimize_logits(stack, labels, w, steps=5)
    np.testing.assert_array_equal(out.logits, stack.logits)
    assert trace == [0.0] * 6


def test_optimize_leaves_unsupervised_layers(rng):
    stack = make_stack(rng)
    _, labels = random_instance(2, 6)
    w = LayerWeights.uniform(3).masked([False, True, False])
    out, _ = optimize_logits(stack, labels, w, steps=5)
    np.testing.assert_array_equal(out.logits[[0, 2]], stack.logits[[0, 2]])
    delta = out.logits[1] - stack.logits[1]
    np.testing.assert_allclose(delta[0], delta[1], atol=1e-12)  # same update on every head
    assert np.abs(delta).max() > 0


@pytest.mark.parametrize("pair_scaled", [True, False])
def test_optimize_monotone(rng, pair_scaled):
    stack = make_stack(rng)
    _, labels = random_instance(4, 6)
    w = weights_from_raw([0.1, 0.4, 0.7])
    _, trace = optimize_logits(stack, labels, w, step_size=0.5, steps=50, pair_scaled=pair_scaled)
    assert len(trace) == 51
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
    assert trace[-1] < trace[0]


def test_optimize_validation(rng):
    stack = make_stack(rng)
    _, labels = random_instance(0, 6)
    with pytest.raises(ArgumentError):
        optimize_logits(stack, labels, LayerWeights.uniform(3), step_size=0.0)
    with pytest.raises(ArgumentError):
        optimize_logits(stack, labels, LayerWeights.uniform(3), steps=-1)
    with pytest.raises(ArgumentError):
        optimize_logits(stack, labels, LayerWeights.uniform(2))
    with pytest.raises(ArgumentError):
        optimize_logits(stack, labels[:5, :5], LayerWeights.uniform(3))


pairs = st.integers(2, 6).flatmap(lambda n: st.tuples(
    arrays(np.float64, (n, n), elements=st.floats(-30, 30)),
    arrays(np.uint8, (n, n), elements=st.sampled_from([0, 1, 255])),
))


@settings(max_examples=80, deadline=None)
@given(pairs)
def test_loss_bounds_and_ignored(pair):
    logits, labels = pair
    loss, grad = affinity_loss(logits, labels)
    assert 0.0 <= loss <= 2.0
    np.testing.assert_array_equal(grad[labels == 255], 0.0)
    # changing ignored logits must not change the loss
    moved = np.where(labels == 255, logits + 5.0, logits)
    assert affinity_loss(moved, labels)[0] == loss


@settings(max_examples=30, deadline=None)
@given(pairs)
def test_gradient_matches_central_differences(pair):
    logits, labels = pair
    logits = np.clip(logits, -8, 8)  # keep away from flat tails
    _, grad = affinity_loss(logits, labels)
    np.testing.assert_allclose(grad, finite_difference_grad(logits, labels), atol=1e-8)
