"""Paired statistics: differences, percentile bootstrap, t-tests, Holm, difference-of-differences."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, PairingError
from .numerics import RngStream
from .probe import nearest_rank

N_RESAMPLES = 1000
CI_LEVEL = 0.95

EQUIVALENT = "equivalent"
BOUNDARY = "boundary"
EXCEEDS = "exceeds"


@dataclass
class PairedStat:
    deltas: np.ndarray = field(repr=False)
    mean: float
    ci_low: float
    ci_high: float
    p_t: float
    n_resamples: int
    resample_seed: int
    p_one_sided: float | None = None

    @property
    def n(self) -> int:
        return len(self.deltas)

    def ci_contains_zero(self) -> bool:
        return self.ci_low <= 0.0 <= self.ci_high


@dataclass
class DoDResult:
    d: np.ndarray = field(repr=False)
    dd: float
    ci_low: float
    ci_high: float
    p_one_sided: float


def check_pairing(ids_a: Sequence | None, ids_b: Sequence | None, n_a: int, n_b: int) -> None:
    if n_a != n_b:
        raise PairingError(f"paired vectors differ in length ({n_a} vs {n_b})")
    if ids_a is None and ids_b is None:
        return
    if ids_a is None or ids_b is None:
        raise PairingError("pairing ids given for one side only")
    a = [tuple(x) if isinstance(x, (list, tuple)) else x for x in ids_a]
    b = [tuple(x) if isinstance(x, (list, tuple)) else x for x in ids_b]
    if len(a) != n_a or a != b:
        raise PairingError("pairing ids do not match element for element")


def paired_diffs(cond_scores, base_scores, cond_ids=None, base_ids=None) -> np.ndarray:
    """``cond - base`` in pairing order. Mismatched ids are an error, never reordered."""
    c = np.asarray(cond_scores, dtype=np.float64)
    b = np.asarray(base_scores, dtype=np.float64)
    check_pairing(cond_ids, base_ids, len(c), len(b))
    if len(c) == 0:
        raise DomainError("need at least one pair")
    return c - b


def _stream(stream: RngStream | int | None) -> RngStream:
    if stream is None:
        return RngStream(0)
    if isinstance(stream, RngStream):
        return stream
    return RngStream(int(stream))


def bootstrap_means(samples, n_resamples: int = N_RESAMPLES, stream: RngStream | int | None = None) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise DomainError("cannot bootstrap an empty sample")
    if n_resamples < 1:
        raise DomainError("n_resamples must be >= 1")
    idx = _stream(stream).integers(n_resamples * n, n).reshape(n_resamples, n)
    return x[idx].mean(axis=1)


def percentile_interval(means: np.ndarray, level: float = CI_LEVEL) -> tuple[float, float]:
    if not 0.0 < level < 1.0:
        raise DomainError(f"level={level} outside (0, 1)")
    s = np.sort(means)
    tail = (1.0 - level) / 2.0
    return nearest_rank(s, tail), nearest_rank(s, 1.0 - tail)


def bootstrap_ci(samples, n_resamples: int = N_RESAMPLES, level: float = CI_LEVEL,
                 stream: RngStream | int | None = None) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean, nearest-rank quantiles."""
    return percentile_interval(bootstrap_means(samples, n_resamples, stream), level)


def bootstrap_p_less(means: np.ndarray) -> float:
    """One-sided p for ``mean < 0``: share of resampled means on the other side.

    Means exactly at zero count half; ``+1/(B+1)`` smoothing keeps p above 0.
    """
    B = len(means)
    above = int(np.count_nonzero(means > 0.0))
    ties = int(np.count_nonzero(means == 0.0))
    return (above + 0.5 * ties + 1.0) / (B + 1.0)


# Student t via the regularized incomplete beta function

def _betacf(a: float, b: float, x: float, tol: float = 1e-15, max_iter: int = 10_000) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise DomainError("betainc needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, dof: float) -> float:
    if dof <= 0:
        raise DomainError("dof must be positive")
    if math.isinf(t):
        return 0.0
    t2 = t * t
    if t2 < dof:
        # small |t|: dof / (dof + t^2) rounds towards 1, use the complement
        p = 1.0 - betainc_reg(0.5, dof / 2.0, t2 / (dof + t2))
    else:
        p = betainc_reg(dof / 2.0, 0.5, dof / (dof + t2))
    return min(1.0, max(0.0, p))


def t_cdf(t: float, dof: float) -> float:
    half = 0.5 * t_two_sided_p(t, dof)
    return 1.0 - half if t >= 0 else half


def t_statistic(samples) -> float:
    x = np.asarray(samples, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise DomainError("paired t-test needs at least two samples")
    mean = float(x.mean())
    sd = float(x.std(ddof=1))
    if sd == 0.0:
        return 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
    return mean / (sd / math.sqrt(n))


def paired_t_test(samples) -> float:
    """Two-sided one-sample t-test on paired differences.

    Zero variance gives p = 0 for a nonzero mean and p = 1 for a zero mean.
    """
    t = t_statistic(samples)
    return t_two_sided_p(t, len(samples) - 1)


def holm_correction(p_values) -> np.ndarray:
    """Holm step-down adjusted p-values, in the input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DomainError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    adj = np.empty(m)
    running = 0.0
    for rank, i in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[i]))
        adj[i] = running
    return adj


def paired_stat(deltas, n_resamples: int = N_RESAMPLES, level: float = CI_LEVEL, seed: int = 0,
                one_sided: bool = False) -> PairedStat:
    d = np.asarray(deltas, dtype=np.float64)
    if len(d) == 0:
        raise DomainError("no paired differences")
    means = bootstrap_means(d, n_resamples, RngStream(seed))
    lo, hi = percentile_interval(means, level)
    p_t = paired_t_test(d) if len(d) >= 2 else 1.0
    return PairedStat(d, float(d.mean()), lo, hi, p_t, n_resamples, seed,
                      bootstrap_p_less(means) if one_sided else None)


def _p_one_sided(means: np.ndarray, alternative: str) -> float:
    if alternative == "less":
        return bootstrap_p_less(means)
    if alternative == "greater":
        return bootstrap_p_less(-means)
    raise DomainError(f"alternative must be 'less' or 'greater', got {alternative!r}")


def diff_of_diffs(sink_deltas, rand_deltas, sink_ids=None, rand_ids=None, n_resamples: int = N_RESAMPLES,
                  level: float = CI_LEVEL, seed: int = 0, alternative: str = "less") -> DoDResult:
    """Mean of ``sink - rand`` with a bootstrap CI and a one-sided bootstrap p.

    The default alternative is ``E[d] < 0``.
    """
    d = paired_diffs(sink_deltas, rand_deltas, sink_ids, rand_ids)
    means = bootstrap_means(d, n_resamples, RngStream(seed))
    lo, hi = percentile_interval(means, level)
    return DoDResult(d, float(d.mean()), lo, hi, _p_one_sided(means, alternative))


def trend_test(d_high, d_low, high_ids=None, low_ids=None, n_resamples: int = N_RESAMPLES,
               level: float = CI_LEVEL, seed: int = 0, alternative: str = "less") -> PairedStat:
    """Paired statistic on ``d_high - d_low``; one-sided p defaults to a negative trend."""
    dd = paired_diffs(d_high, d_low, high_ids, low_ids)
    ps = paired_stat(dd, n_resamples, level, seed)
    ps.p_one_sided = _p_one_sided(bootstrap_means(dd, n_resamples, RngStream(seed)), alternative)
    return ps


def equivalence_check(stat: PairedStat | tuple[float, float], margin: float) -> str:
    if not margin > 0:
        raise DomainError(f"margin must be positive, got {margin}")
    lo, hi = (stat.ci_low, stat.ci_high) if isinstance(stat, PairedStat) else stat
    if abs(lo) < margin and abs(hi) < margin:
        return EQUIVALENT
    if lo >= margin or hi <= -margin:
        return EXCEEDS
    return BOUNDARY
