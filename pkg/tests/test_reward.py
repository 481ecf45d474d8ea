import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dexscaffold.reward import DimensionMismatch, RewardParams, reward, tracking_error


def brute_error(a, b):
    total = 0.0
    for p, q in zip(a, b):
        total += math.sqrt(sum((x - y) ** 2 for x, y in zip(p, q)))
    return total / len(a)


def test_hand_computed_values():
    z = np.zeros((1, 3))
    assert abs(reward(z, z, 0) - (1.0 + math.exp(-100.0))) < 1e-12
    off = np.array([[0.05, 0.0, 0.0]])
    assert abs(reward(off, z, 0) - (math.exp(-1.0) + math.exp(-100.0))) < 1e-12
    assert abs(reward(off, z, 0) - 0.3679) < 1e-4
    assert abs(reward(z, z, 4) - (1.0 + math.exp(-1.0 / 4.01))) < 1e-12
    assert abs(reward(z, z, 4) - 1.7792) < 1e-4


def test_tracking_error_examples():
    a = np.zeros((2, 3))
    assert tracking_error(a, a) == 0.0
    b = np.array([[0.1, 0.0, 0.0], [0.0, 0.3, 0.0]])
    assert abs(tracking_error(a, b) - 0.2) < 1e-15


def test_tracking_error_matches_brute_force(rng):
    for _ in range(50):
        k = rng.integers(1, 5)
        a, b = rng.normal(size=(k, 3)), rng.normal(size=(k, 3))
        assert abs(tracking_error(a, b) - brute_error(a, b)) < 1e-12


def test_batched_shapes():
    a = np.zeros((4, 2, 2, 3))
    assert tracking_error(a, a).shape == (4, 2)
    assert reward(a, a, np.zeros((4, 2))).shape == (4, 2)


def test_errors():
    with pytest.raises(DimensionMismatch):
        tracking_error(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(DimensionMismatch):
        tracking_error(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        reward(np.zeros((1, 3)), np.zeros((1, 3)), 5)
    with pytest.raises(ValueError):
        RewardParams(beta=0.0)


def test_monotone_on_random_pairs(rng):
    planned = rng.normal(size=(1000, 2, 3))
    base = planned + rng.normal(scale=0.02, size=planned.shape)
    direction = base - planned
    farther = planned + direction * rng.uniform(1.05, 2.0, (1000, 1, 1))
    n = rng.integers(0, 4, 1000)
    r0 = reward(base, planned, n)
    assert np.all(reward(farther, planned, n) < r0)
    assert np.all(reward(base, planned, n + 1) > r0)


points = arrays(np.float64, (3, 3), elements=st.floats(-2, 2, allow_nan=False))


@settings(max_examples=200)
@given(points, points, st.integers(0, 4))
def test_bounds_and_permutation(a, b, n):
    r = reward(a, b, n)
    assert 0.0 < r < 2.0
    perm = [2, 0, 1]
    assert abs(reward(a[perm], b[perm], n) - r) < 1e-12
