"""Attention-sink statistics computed from recorded attention.

All functions accept a single head (``(N, N)`` attention, length-``N`` mass)
or a stack of heads along leading axes where noted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError

PER_HEAD = "per-head"
UNION_BUDGET = "union-budget"
ENTROPY_CLAMP = 1e-12


@dataclass
class AttentionRecord:
    layer: int
    step: int
    head: int
    incoming_mass: np.ndarray
    entropy_per_query: np.ndarray
    top5_concentration: float
    max_activation: float
    p95_activation: float


@dataclass(frozen=True)
class SinkSet:
    layer: int
    step: int
    head: int  # -1 for sets shared by all heads
    k: int
    indices: tuple[int, ...]
    protocol: str = PER_HEAD
    seq_len: int | None = field(default=None, compare=False)

    def __post_init__(self):
        idx = self.indices
        if len(idx) != self.k:
            raise ContractError(f"SinkSet has {len(idx)} indices but k={self.k}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ContractError("SinkSet indices must be strictly increasing")
        if idx and (idx[0] < 0 or (self.seq_len is not None and idx[-1] >= self.seq_len)):
            raise ContractError("SinkSet index out of range")

    def to_dict(self) -> dict:
        return {"layer": self.layer, "step": self.step, "head": self.head, "k": self.k,
                "indices": list(self.indices), "protocol": self.protocol}


def incoming_mass(A: np.ndarray, check: bool = True, n_queries: int | None = None) -> np.ndarray:
    """Column average of a row-stochastic attention matrix (over the last two axes).

    ``n_queries`` restricts the average to the first ``n_queries`` rows, i.e.
    image queries only in the joint layout. That variant is not the standard
    definition and is off by default.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ContractError(f"attention must be square over its last two axes, got {A.shape}")
    if check and not np.allclose(A.sum(axis=-1), 1.0, rtol=0.0, atol=1e-9):
        raise ContractError("attention rows do not sum to 1")
    if n_queries is not None:
        A = A[..., :n_queries, :]
    return A.mean(axis=-2)


def _top_order(m: np.ndarray) -> np.ndarray:
    # stable sort on -m: equal masses keep ascending index order
    return np.argsort(-m, kind="stable")


def topk_sinks(m, k: int, protocol: str = PER_HEAD, layer: int = -1, step: int = -1,
               head: int = -1) -> SinkSet:
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[-1]
    if not 1 <= k <= n:
        raise DomainError(f"k={k} outside [1, {n}]")
    idx = tuple(sorted(int(i) for i in _top_order(m)[:k]))
    return SinkSet(layer, step, head, k, idx, protocol, n)


def union_budget_sinks(masses, k: int, layer: int = -1, step: int = -1) -> SinkSet:
    """Top-k of the head-averaged incoming mass; one set applied to every head."""
    masses = np.asarray(masses, dtype=np.float64)
    if masses.size == 0:
        raise DomainError("no head records")
    if masses.ndim == 1:
        masses = masses[None, :]
    return topk_sinks(masses.mean(axis=0), k, UNION_BUDGET, layer, step, -1)


def max_mass(masses) -> float:
    """Head-averaged maximum incoming mass at one (layer, step)."""
    masses = np.asarray(masses, dtype=np.float64)
    if masses.size == 0:
        raise DomainError("no head records")
    if masses.ndim == 1:
        masses = masses[None, :]
    return float(masses.max(axis=-1).mean())


def attention_entropy(p) -> np.ndarray | float:
    """Natural-log entropy over the last axis after clamping at 1e-12."""
    p = np.maximum(np.asarray(p, dtype=np.float64), ENTROPY_CLAMP)
    h = -(p * np.log(p)).sum(axis=-1)
    return float(h) if h.ndim == 0 else h


def topk_concentration(m, k: int = 5) -> float:
    m = np.asarray(m, dtype=np.float64)
    if not 1 <= k <= m.shape[-1]:
        raise DomainError(f"k={k} outside [1, {m.shape[-1]}]")
    return float(m[_top_order(m)[:k]].sum())


def index0_overlap(sinksets: Iterable[SinkSet]) -> float:
    sets = list(sinksets)
    if not sets:
        raise DomainError("no sink sets")
    if any(s.k != 1 for s in sets):
        raise ContractError("index-0 overlap is defined on top-1 sets only")
    return sum(s.indices[0] == 0 for s in sets) / len(sets)


def modality_attribution(indices: SinkSet | Sequence[int], n_img: int, n_txt: int) -> dict[str, int]:
    idx = indices.indices if isinstance(indices, SinkSet) else tuple(int(i) for i in indices)
    n = n_img + n_txt
    if any(i < 0 or i >= n for i in idx):
        raise ContractError(f"index outside [0, {n})")
    text = sum(i >= n_img for i in idx)
    return {"text_count": text, "image_count": len(idx) - text}


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    """``ceil(q * n)``-th order statistic (1-based) of an ascending array."""
    n = len(sorted_values)
    r = max(1, math.ceil(q * n - 1e-12))
    return float(sorted_values[min(r, n) - 1])


def activation_stats(block_output) -> dict[str, float]:
    """Max and nearest-rank 95th percentile of per-token Euclidean norms."""
    x = np.asarray(block_output, dtype=np.float64)
    if x.size == 0:
        raise DomainError("empty block output")
    norms = np.sort(np.sqrt((x.reshape(x.shape[0], -1) ** 2).sum(axis=1)))
    return {"max_norm": float(norms[-1]), "p95_norm": nearest_rank(norms, 0.95)}


def head_records(layer: int, step: int, probs: np.ndarray, block_output: np.ndarray) -> list[AttentionRecord]:
    """Per-head records for one attention site (``probs`` has shape ``(H, N, N)``)."""
    m = incoming_mass(probs)
    ent = attention_entropy(probs)
    act = activation_stats(block_output)
    return [AttentionRecord(layer, step, h, m[h], ent[h], topk_concentration(m[h], min(5, m.shape[-1])),
                            act["max_norm"], act["p95_norm"]) for h in range(probs.shape[0])]


def summarize_site(layer: int, step: int, t_norm: float, probs: np.ndarray, block_output: np.ndarray,
                   n_img: int) -> dict:
    """Compact, JSON-ready summary of one (layer, step) site across heads."""
    m = incoming_mass(probs)
    n = m.shape[-1]
    top1 = [topk_sinks(m[h], 1).indices[0] for h in range(m.shape[0])]
    act = activation_stats(block_output)
    return {
        "layer": layer,
        "step": step,
        "t_norm": t_norm,
        "max_mass": max_mass(m),
        "entropy_mean": float(attention_entropy(probs).mean()),
        "top5": float(np.mean([topk_concentration(m[h], min(5, n)) for h in range(m.shape[0])])),
        "act_max": act["max_norm"],
        "act_p95": act["p95_norm"],
        "top1": top1,
        "top1_text": sum(i >= n_img for i in top1),
    }
