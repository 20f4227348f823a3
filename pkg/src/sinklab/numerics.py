"""Deterministic dense arithmetic and a counter-based splittable PRNG.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The one place
where numpy's own kernels are not good enough is matrix multiplication:
BLAS reassociates sums, so :func:`matmul` uses a compiled fixed-order loop
that reproduces the naive triple loop bit for bit.
"""
from __future__ import annotations

import hashlib
import math

import numba
import numpy as np

from .errors import DomainError, ShapeError

MASK64 = 0xFFFF_FFFF_FFFF_FFFF
GOLDEN_GAMMA = 0x9E37_79B9_7F4A_7C15
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int (wrapping 64-bit arithmetic)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(0xBF58_476D_1CE4_E5B9)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(0x94D0_49BB_1331_11EB)
    return z ^ (z >> np.uint64(31))


def label_hash(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")


class RngStream:
    """Counter-based generator: output ``i`` is ``mix64(key + (i + 1) * gamma)``.

    The key is a mixed version of ``seed``, so the whole stream is a pure
    function of ``(seed, counter)``. Child streams are keyed by
    ``mix64(seed ^ label_hash(label))``. Instances are cheap; never share one
    across concurrent tasks, derive a child per task instead.
    """

    __slots__ = ("seed", "counter", "_key")

    def __init__(self, seed: int, counter: int = 0):
        if not 0 <= seed <= MASK64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if not 0 <= counter <= MASK64:
            raise DomainError(f"counter must be a 64-bit unsigned integer, got {counter}")
        self.seed = int(seed)
        self.counter = int(counter)
        self._key = mix64(self.seed)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def child(self, label: str | int) -> "RngStream":
        return RngStream(mix64(self.seed ^ label_hash(str(label))))

    def next_u64(self) -> int:
        self.counter += 1
        return mix64(self._key + self.counter * GOLDEN_GAMMA)

    def u64_array(self, n: int) -> np.ndarray:
        if n < 0:
            raise DomainError("n must be non-negative")
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self._key) + idx * np.uint64(GOLDEN_GAMMA)
            return _mix64_array(z)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        if not lo < hi:
            raise DomainError(f"need lo < hi, got [{lo}, {hi})")
        u = (self.next_u64() >> 11) * _INV_2_53
        x = lo + (hi - lo) * u
        # rounding can land exactly on hi for wide intervals
        return x if x < hi else math.nextafter(hi, lo)

    def uniform_array(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if not lo < hi:
            raise DomainError(f"need lo < hi, got [{lo}, {hi})")
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        x = lo + (hi - lo) * u
        return np.minimum(x, np.nextafter(hi, lo))

    def integers(self, n: int, high: int) -> np.ndarray:
        """``n`` integers uniform on ``[0, high)``."""
        if high < 1:
            raise DomainError("high must be >= 1")
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return np.minimum((u * high).astype(np.int64), high - 1)

    def normal_array(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller on consecutive uniform pairs."""
        m = (n + 1) // 2
        u = self.uniform_array(2 * m)
        u1 = 1.0 - u[0::2]  # in (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform_array(n - 1)
        for pos, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[pos] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def seeded_uniform(stream: RngStream, lo: float, hi: float) -> float:
    return stream.uniform(lo, hi)


def stable_softmax(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DomainError("softmax needs a non-empty vector")
    if not np.all(np.isfinite(x)):
        raise DomainError("softmax input contains non-finite values")
    return softmax_rows(x)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max subtraction; no input checks."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@numba.njit(cache=True)
def _matmul2d(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for p in range(k):
            aip = a[i, p]
            for j in range(m):
                out[i, j] += aip * b[p, j]
    return out


@numba.njit(cache=True)
def _matmul3d(a, b):
    bsz, n, k = a.shape
    m = b.shape[2]
    out = np.zeros((bsz, n, m))
    for h in range(bsz):
        for i in range(n):
            for p in range(k):
                aip = a[h, i, p]
                for j in range(m):
                    out[h, i, j] += aip * b[h, p, j]
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product with left-to-right accumulation over the inner index.

    Accepts 2-D operands or 3-D operands with a shared leading batch axis.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
        return _matmul2d(a, b)
    if a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"incompatible batched shapes: {a.shape} x {b.shape}")
        return _matmul3d(a, b)
    raise ShapeError(f"matmul supports 2-D or batched 3-D operands, got {a.shape} x {b.shape}")
