import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import example, given
from hypothesis import strategies as st

from sinklab.errors import DomainError, PairingError
from sinklab.numerics import RngStream
from sinklab.stats import (BOUNDARY, EQUIVALENT, EXCEEDS, betainc_reg, bootstrap_ci, bootstrap_means,
                           bootstrap_p_less, diff_of_diffs, equivalence_check, holm_correction, paired_diffs,
                           paired_stat, paired_t_test, t_cdf, trend_test)


def oracle_holm(p):
    m = len(p)
    order = sorted(range(m), key=lambda i: (p[i], i))
    adj = [0.0] * m
    prev = 0.0
    for r, i in enumerate(order):
        prev = max(prev, min(1.0, (m - r) * p[i]))
        adj[i] = prev
    return adj


def test_paired_diffs():
    np.testing.assert_array_equal(paired_diffs([1.0, 2.0], [0.5, 2.5], [3, 4], [3, 4]), [0.5, -0.5])
    with pytest.raises(PairingError):
        paired_diffs([1.0, 2.0], [1.0], None, None)
    with pytest.raises(PairingError):
        paired_diffs([1.0, 2.0], [1.0, 2.0], [1, 2], [2, 1])
    with pytest.raises(PairingError):
        paired_diffs([1.0], [1.0], [1], None)


def test_bootstrap_deterministic_and_bounded():
    x = RngStream(1).normal_array(50)
    assert bootstrap_ci(x, stream=5) == bootstrap_ci(x, stream=5)
    lo, hi = bootstrap_ci(x, stream=5)
    assert x.min() <= lo <= x.mean() <= hi <= x.max()


def test_bootstrap_rejects_empty():
    with pytest.raises(DomainError):
        bootstrap_means([])


def test_bootstrap_p_tie_rule():
    assert bootstrap_p_less(np.zeros(1000)) == pytest.approx(501 / 1001)
    assert bootstrap_p_less(-np.ones(1000)) == 1 / 1001


def test_t_reference_point():
    assert 2 * (1 - t_cdf(2.045, 29)) == pytest.approx(0.0501, abs=5e-4)


@given(st.floats(-20, 20), st.floats(0.5, 200))
@example(5.960464477539063e-08, 3.0)
def test_t_cdf_against_scipy(t, dof):
    assert t_cdf(t, dof) == pytest.approx(scipy.stats.t.cdf(t, dof), abs=1e-10)


@given(st.floats(0.1, 20), st.floats(0.1, 20), st.floats(0, 1))
def test_betainc_against_scipy(a, b, x):
    import scipy.special
    assert betainc_reg(a, b, x) == pytest.approx(scipy.special.betainc(a, b, x), abs=1e-10)


def test_paired_t_degenerate():
    assert paired_t_test([0.0, 0.0, 0.0]) == 1.0
    assert paired_t_test([1.0, 1.0, 1.0]) == 0.0
    with pytest.raises(DomainError):
        paired_t_test([1.0])


def test_paired_t_against_scipy():
    x = RngStream(3).normal_array(30) + 0.3
    assert paired_t_test(x) == pytest.approx(scipy.stats.ttest_1samp(x, 0.0).pvalue, abs=1e-12)


def test_holm_example():
    np.testing.assert_allclose(holm_correction([0.01, 0.04, 0.03]), [0.03, 0.06, 0.06], atol=1e-15)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_holm_properties(p):
    adj = holm_correction(p)
    assert np.all(adj >= np.asarray(p)) and np.all(adj <= 1.0)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(adj[order]) >= 0)
    np.testing.assert_allclose(adj, oracle_holm(p), rtol=0, atol=0)


def test_holm_rejects():
    with pytest.raises(DomainError):
        holm_correction([0.5, 1.5])


def test_paired_stat_fields():
    d = RngStream(2).normal_array(40)
    ps = paired_stat(d, n_resamples=500, seed=3, one_sided=True)
    assert ps.n == 40 and ps.mean == pytest.approx(d.mean())
    assert ps.ci_low <= ps.mean <= ps.ci_high
    assert 0 < ps.p_one_sided < 1


def test_dod_injection():
    s = RngStream(77)
    rand = 0.01 * s.normal_array(64)
    r = diff_of_diffs(rand - 0.02, rand, list(range(64)), list(range(64)))
    assert r.dd == pytest.approx(-0.02, abs=1e-12)
    assert r.p_one_sided < 0.01
    same = diff_of_diffs(rand, rand)
    assert same.dd == 0.0 and 0.4 <= same.p_one_sided <= 0.6


def test_dod_alternative():
    x = np.ones(10) * 0.1
    assert diff_of_diffs(x, np.zeros(10), alternative="greater").p_one_sided < 0.01
    with pytest.raises(DomainError):
        diff_of_diffs(x, x, alternative="two-sided")


def test_dod_pairing_error():
    with pytest.raises(PairingError):
        diff_of_diffs([1.0, 2.0], [1.0, 2.0], [0, 1], [1, 0])


def test_trend_recovers_sign():
    s = RngStream(8)
    d_low = 0.01 * s.normal_array(64)
    d_high = d_low - 0.015 + 0.005 * s.normal_array(64)
    ps = trend_test(d_high, d_low)
    assert ps.mean < 0 and ps.p_one_sided < 0.05


@pytest.mark.parametrize("ci,verdict", [((-0.001, 0.0015), EQUIVALENT), ((-0.003, 0.001), BOUNDARY),
                                        ((0.0025, 0.004), EXCEEDS), ((-0.01, -0.002), EXCEEDS)])
def test_equivalence(ci, verdict):
    assert equivalence_check(ci, 0.002) == verdict


def test_equivalence_rejects_margin():
    with pytest.raises(DomainError):
        equivalence_check((0.0, 0.0), 0.0)


def test_t_cdf_symmetry():
    for t in (0.3, 1.7, 5.0):
        assert t_cdf(t, 7) + t_cdf(-t, 7) == pytest.approx(1.0, abs=1e-14)
    assert math.isclose(t_cdf(0.0, 3), 0.5)
