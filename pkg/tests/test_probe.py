import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sinklab.errors import ContractError, DomainError
from sinklab.numerics import RngStream, softmax_rows
from sinklab.probe import (PER_HEAD, SinkSet, activation_stats, attention_entropy, incoming_mass,
                           index0_overlap, max_mass, modality_attribution, nearest_rank, summarize_site,
                           topk_concentration, topk_sinks, union_budget_sinks)


# brute-force oracles

def oracle_mass(A):
    N = len(A)
    return [sum(A[i][j] for i in range(N)) / N for j in range(N)]


def oracle_topk(m, k):
    # repeatedly take the largest remaining value, lowest index on ties
    left = list(range(len(m)))
    chosen = []
    for _ in range(k):
        best = left[0]
        for j in left:
            if m[j] > m[best]:
                best = j
        chosen.append(best)
        left.remove(best)
    return tuple(sorted(chosen))


def random_attention(seed, H, N, sharp=1.0):
    s = RngStream(seed)
    return softmax_rows(sharp * s.normal_array(H * N * N).reshape(H, N, N))


def test_incoming_mass_uniform():
    np.testing.assert_allclose(incoming_mass(np.full((4, 4), 0.25)), 0.25, atol=1e-15)


def test_incoming_mass_rejects_non_stochastic():
    with pytest.raises(ContractError):
        incoming_mass(np.full((3, 3), 0.5))
    with pytest.raises(ContractError):
        incoming_mass(np.zeros((3, 4)))


def test_incoming_mass_matches_oracle():
    A = random_attention(1, 1, 9)[0]
    assert np.allclose(incoming_mass(A), oracle_mass(A.tolist()), rtol=0, atol=1e-15)


def test_image_query_variant():
    A = random_attention(2, 1, 6)[0]
    np.testing.assert_allclose(incoming_mass(A, n_queries=4), A[:4].mean(axis=0))


def test_topk_tie_break():
    assert topk_sinks([0.1, 0.4, 0.4, 0.1], 1).indices == (1,)
    assert topk_sinks([0.25] * 4, 2).indices == (0, 1)


def test_topk_concentration_example():
    assert topk_concentration([0.6, 0.1, 0.1, 0.1, 0.05, 0.05], 5) == pytest.approx(0.95, abs=1e-15)


def test_topk_rejects_bad_k():
    with pytest.raises(DomainError):
        topk_sinks([0.5, 0.5], 3)
    with pytest.raises(DomainError):
        topk_sinks([0.5, 0.5], 0)


@given(st.integers(2, 40), st.integers(1, 40), st.integers(0, 2**32), st.booleans())
def test_topk_matches_oracle(n, k, seed, coarse):
    k = min(k, n)
    m = RngStream(seed).uniform_array(n)
    if coarse:  # force ties
        m = np.round(m * 4) / 4
    s = topk_sinks(m, k)
    assert s.indices == oracle_topk(m.tolist(), k)
    assert len(s.indices) == k


def test_union_budget_uses_head_mean():
    masses = np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]])
    s = union_budget_sinks(masses, 1)
    assert s.indices == (1,) and s.head == -1


def test_max_mass_head_average():
    assert max_mass([[0.5, 0.5], [0.9, 0.1]]) == pytest.approx(0.7)
    with pytest.raises(DomainError):
        max_mass(np.zeros((0, 3)))


def test_max_mass_uniform_lower_bound():
    N = 16
    assert max_mass(np.full((4, N), 1 / N)) == pytest.approx(1 / N)


def test_entropy_examples():
    assert attention_entropy([0.25] * 4) == pytest.approx(math.log(4), abs=1e-12)
    assert attention_entropy([1.0, 0, 0, 0]) == pytest.approx(8.29e-11, rel=0.01)


@given(st.integers(1, 200), st.integers(0, 2**32))
def test_entropy_bounds(n, seed):
    p = RngStream(seed).uniform_array(n) ** 3
    p = p / p.sum()
    h = attention_entropy(p)
    assert 0.0 <= h <= math.log(n) + 1e-9


def test_entropy_vectorized():
    P = random_attention(3, 2, 5)
    H = attention_entropy(P)
    assert H.shape == (2, 5)
    assert H[1, 3] == attention_entropy(P[1, 3])


def test_sinkset_contract():
    with pytest.raises(ContractError):
        SinkSet(0, 0, 0, 2, (1,))
    with pytest.raises(ContractError):
        SinkSet(0, 0, 0, 2, (3, 1))
    with pytest.raises(ContractError):
        SinkSet(0, 0, 0, 1, (5,), PER_HEAD, seq_len=5)


def test_index0_overlap():
    sets = [SinkSet(0, s, 0, 1, (i,)) for s, i in enumerate([0, 0, 3, 0])]
    assert index0_overlap(sets) == 0.75
    with pytest.raises(ContractError):
        index0_overlap([SinkSet(0, 0, 0, 2, (0, 1))])


def test_modality_attribution():
    assert modality_attribution([0, 3, 64, 70], 64, 16) == {"text_count": 2, "image_count": 2}
    with pytest.raises(ContractError):
        modality_attribution([80], 64, 16)


def test_nearest_rank_hundred():
    x = np.arange(1.0, 101.0)
    assert nearest_rank(x, 0.95) == 95.0
    assert nearest_rank(x, 0.025) == 3.0
    assert nearest_rank(np.arange(1000.0), 0.025) == 24.0
    assert nearest_rank(np.arange(1000.0), 0.975) == 974.0


def test_activation_stats_example():
    x = np.zeros((100, 3))
    x[:, 0] = np.arange(1.0, 101.0)
    st_ = activation_stats(x)
    assert st_ == {"max_norm": 100.0, "p95_norm": 95.0}


def test_summarize_site_fields():
    P = random_attention(4, 3, 10, sharp=3.0)
    out = np.ones((10, 4))
    s = summarize_site(2, 1, 0.1, P, out, n_img=6)
    assert len(s["top1"]) == 3
    assert s["top1_text"] == sum(i >= 6 for i in s["top1"])
    assert s["max_mass"] >= 0.1 - 1e-15
    assert s["act_max"] == pytest.approx(2.0)
