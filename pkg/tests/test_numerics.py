import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sinklab.errors import DomainError, ShapeError
from sinklab.numerics import RngStream, matmul, seeded_uniform, stable_softmax


def naive_matmul(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def test_softmax_uniform():
    assert np.array_equal(stable_softmax([0, 0, 0, 0]), np.full(4, 0.25))


@pytest.mark.parametrize("c", [-50.0, 0.0, 3.7, 200.0])
def test_softmax_shift_example(c):
    np.testing.assert_allclose(stable_softmax([c, c + math.log(3)]), [0.25, 0.75], atol=1e-12)


def test_softmax_large_negative_bias():
    p = stable_softmax([2.0, 2.0 - 1e4])
    assert p[0] == 1.0
    assert p[1] <= math.exp(-1e4 + 1) and p[1] == 0.0


@pytest.mark.parametrize("bad", [[], [1.0, math.nan], [math.inf, 0.0]])
def test_softmax_rejects(bad):
    with pytest.raises(DomainError):
        stable_softmax(bad)


@given(hnp.arrays(np.float64, st.integers(1, 512), elements=st.floats(-30, 30)))
def test_softmax_is_probability_vector(x):
    p = stable_softmax(x)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-12


@given(hnp.arrays(np.float64, st.integers(1, 64), elements=st.floats(-10, 10)), st.floats(-10, 10))
def test_softmax_shift_invariance(x, c):
    np.testing.assert_allclose(stable_softmax(x + c), stable_softmax(x), rtol=0, atol=1e-14)


def test_uniform_deterministic():
    assert seeded_uniform(RngStream(42, 0), 0, 1) == seeded_uniform(RngStream(42, 0), 0, 1)


def test_uniform_seeds_differ():
    assert RngStream(42).uniform() != RngStream(43).uniform()


def test_uniform_mean_law_of_large_numbers():
    u = RngStream(42).uniform_array(10**6)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert 0.498 <= u.mean() <= 0.502


def test_scalar_and_array_paths_agree():
    s = RngStream(9, 5)
    scalar = [s.uniform() for _ in range(1000)]
    assert np.array_equal(np.array(scalar), RngStream(9, 5).uniform_array(1000))
    assert s.counter == 1005


def test_replay_from_counter():
    s = RngStream(123)
    s.u64_array(17)
    resumed = RngStream(123, 17)
    assert np.array_equal(s.u64_array(50), resumed.u64_array(50))


def test_uniform_rejects_empty_interval():
    with pytest.raises(DomainError):
        seeded_uniform(RngStream(1), 1.0, 1.0)


def test_uniform_bounds_hold_for_shifted_interval():
    x = RngStream(5).uniform_array(10000, -3.0, 2.0)
    assert x.min() >= -3.0 and x.max() < 2.0


def test_child_streams_distinct():
    root = RngStream(7)
    draws = {root.child(label).next_u64() for label in ("a", "b", "c", "latent", "weights", 1, 2)}
    assert len(draws) == 7
    assert root.child("a").next_u64() == RngStream(7).child("a").next_u64()


def test_normal_moments():
    z = RngStream(11).normal_array(200_001)
    assert len(z) == 200_001
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01


def test_permutation_is_permutation():
    p = RngStream(3).permutation(50)
    assert sorted(p.tolist()) == list(range(50))


def test_matmul_identity():
    m = RngStream(1).uniform_array(9).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), m), m)


def test_matmul_small_example():
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), np.array([[2.0], [4.0]]))


def test_matmul_matches_naive_8x8():
    s = RngStream(99)
    a = s.normal_array(64).reshape(8, 8)
    b = s.normal_array(64).reshape(8, 8)
    assert np.array_equal(matmul(a, b), naive_matmul(a, b))


@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**32))
def test_matmul_bit_exact_against_oracle(n, k, m, seed):
    s = RngStream(seed)
    a = s.normal_array(n * k).reshape(n, k)
    b = s.normal_array(k * m).reshape(k, m)
    assert np.array_equal(matmul(a, b), naive_matmul(a, b))


def test_matmul_batched_matches_per_batch():
    s = RngStream(4)
    a = s.normal_array(3 * 5 * 6).reshape(3, 5, 6)
    b = s.normal_array(3 * 6 * 2).reshape(3, 6, 2)
    out = matmul(a, b)
    for h in range(3):
        assert np.array_equal(out[h], naive_matmul(a[h], b[h]))


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))
