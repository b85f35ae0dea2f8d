import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aream.affinity import (
    AffinityStack,
    build_affinity_logits,
    check_row_stochastic,
    column_concentration,
    head_average,
    hellinger,
    layer_average,
    oversmoothing_score,
)
from aream.errors import ArgumentError
from aream.tensor import softmax


def test_build_logits_examples():
    eye = np.eye(2)
    r = 1 / math.sqrt(2)
    np.testing.assert_allclose(build_affinity_logits(eye, eye), [[r, 0], [0, r]], atol=1e-15)
    np.testing.assert_array_equal(build_affinity_logits(np.zeros((3, 2)), np.ones((3, 2))), 0.0)


def test_build_logits_scaling(rng):
    q1, k1 = rng.normal(size=(4, 1)), rng.normal(size=(4, 1))
    # zero padding keeps every dot product, so only the 1/sqrt(D_k) factor changes
    q4, k4 = np.pad(q1, ((0, 0), (0, 3))), np.pad(k1, ((0, 0), (0, 3)))
    np.testing.assert_allclose(build_affinity_logits(q4, k4), build_affinity_logits(q1, k1) / 2)
    with pytest.raises(ArgumentError):
        build_affinity_logits(np.ones((3, 2)), np.ones((3, 3)))


def test_head_average_examples():
    x = np.array([[0.3, -1.0], [2.0, 0.5]])
    np.testing.assert_allclose(head_average(np.stack([x, x, x])), softmax(x, axis=1), atol=1e-15)
    np.testing.assert_array_equal(head_average(np.zeros((1, 2, 2))), 0.5)
    h1 = np.array([[0.0, math.log(3.0)], [0.0, 0.0]])
    out = head_average(np.stack([h1, np.zeros((2, 2))]))
    # mean of softmax([0, ln 3]) = [1/4, 3/4] and [1/2, 1/2]
    np.testing.assert_allclose(out[0], [0.375, 0.625], atol=1e-15)


def test_layer_average_examples():
    a = np.array([[1.0, 0.0], [0.0, 1.0]])
    b = np.full((2, 2), 0.5)
    np.testing.assert_array_equal(layer_average([a]), a)
    np.testing.assert_array_equal(layer_average([b, b]), b)
    np.testing.assert_allclose(layer_average([a, b]), [[0.75, 0.25], [0.25, 0.75]])
    with pytest.raises(ArgumentError):
        layer_average([])
    with pytest.raises(ArgumentError):
        layer_average([a, np.eye(3)])


def test_averages_preserve_row_stochastic(rng):
    stack = AffinityStack(rng.normal(scale=5, size=(3, 4, 10, 10)))
    probs = stack.layer_probs()
    for p in probs + [layer_average(probs)]:
        check_row_stochastic(p)


def test_hellinger_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert hellinger(p, p) == 0.0
    assert hellinger([1, 0], [0, 1]) == pytest.approx(1.0, abs=1e-15)
    # (1/sqrt2) sqrt((1 - sqrt.5)^2 + .5)
    expected = math.sqrt((1 - math.sqrt(0.5)) ** 2 + 0.5) / math.sqrt(2)
    assert hellinger([1, 0], [0.5, 0.5]) == pytest.approx(expected, abs=1e-15)
    assert hellinger([1, 0], [0.5, 0.5]) == pytest.approx(0.5412, abs=1e-4)
    with pytest.raises(ArgumentError):
        hellinger([1, 0], [1, 0, 0])
    with pytest.raises(ArgumentError):
        hellinger([0.7, 0.7], [0.5, 0.5])


dist = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8).filter(lambda v: sum(v) > 0)


@settings(max_examples=200, deadline=None)
@given(dist, dist)
def test_hellinger_properties(a, b):
    n = min(len(a), len(b))
    p = np.array(a[:n]) / sum(a[:n]) if sum(a[:n]) > 0 else np.full(n, 1 / n)
    q = np.array(b[:n]) / sum(b[:n]) if sum(b[:n]) > 0 else np.full(n, 1 / n)
    d = hellinger(p, q)
    assert 0.0 <= d <= 1.0
    assert d == hellinger(q, p)
    if np.array_equal(p, q):
        assert d <= 1e-12


def test_oversmoothing_examples():
    assert oversmoothing_score(np.eye(2)) == pytest.approx(1.0, abs=1e-15)
    rows = np.tile(softmax(np.arange(5.0)), (5, 1))
    assert oversmoothing_score(rows) == pytest.approx(0.0, abs=1e-12)


def test_oversmoothing_exhaustive_matches_direct(rng):
    a = softmax(rng.normal(size=(6, 6)), axis=1)
    direct = np.mean([hellinger(a[i], a[j]) for i in range(6) for j in range(i + 1, 6)])
    assert oversmoothing_score(a) == pytest.approx(direct, abs=1e-14)


def test_oversmoothing_decreases_with_interpolation(rng):
    a = softmax(3 * rng.normal(size=(12, 12)), axis=1)
    common = softmax(rng.normal(size=12))
    scores = [oversmoothing_score((1 - t) * a + t * common) for t in np.linspace(0, 0.9, 10)]
    assert all(b < a for a, b in zip(scores, scores[1:]))


def test_oversmoothing_permutation_invariant(rng):
    a = softmax(2 * rng.normal(size=(9, 9)), axis=1)
    perm = rng.permutation(9)
    assert oversmoothing_score(a[perm][:, perm]) == pytest.approx(oversmoothing_score(a), abs=1e-14)


def test_oversmoothing_sampled_is_deterministic(rng):
    a = softmax(rng.normal(size=(100, 100)), axis=1)
    s1 = oversmoothing_score(a, sample_pairs=500, seed=3)
    assert s1 == oversmoothing_score(a, sample_pairs=500, seed=3)
    exact = oversmoothing_score(a, sample_pairs=10**6)
    assert s1 == pytest.approx(exact, abs=0.02)


def test_column_concentration():
    assert column_concentration(np.full((4, 4), 0.25)) == pytest.approx(0.25)
    collapsed = np.zeros((4, 4))
    collapsed[:, 2] = 1.0
    assert column_concentration(collapsed) == 1.0


def test_affinity_stack_validation():
    with pytest.raises(ArgumentError):
        AffinityStack(np.zeros((2, 3, 3)))
    with pytest.raises(ArgumentError):
        AffinityStack(np.zeros((0, 1, 3, 3)))
