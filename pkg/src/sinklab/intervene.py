"""Score-path and value-path sink interventions plus the processors that apply them."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from . import probe
from .errors import ConfigError, DomainError
from .numerics import RngStream, softmax_rows
from .probe import PER_HEAD, UNION_BUDGET, SinkSet
from .toymodel import Site

PATHWAYS = ("score", "value", "none")
VALUE_MODES = ("zero", "mean", "lerp")
RANDOM = "random"
INDEX0 = "index0-proxy"
PROTOCOLS = (PER_HEAD, UNION_BUDGET, RANDOM, INDEX0)
MODALITIES = ("all", "text", "image")
FULL_WINDOW = (0.0, 1.0)
ABLATION_BIAS = -1e4


@dataclass(frozen=True)
class InterventionSpec:
    pathway: str = "score"
    eta: float = 0.0
    value_mode: str = "zero"
    alpha: float = 0.0
    k: int = 1
    protocol: str = PER_HEAD
    target_layers: tuple[int, ...] | None = None  # None: the model's middle layer
    phase_window: tuple[float, float] = FULL_WINDOW
    random_seed: int = 0
    enabled: bool = True
    # restrict targets to one modality after selection (attribution ablations)
    modality: str = "all"

    def __post_init__(self):
        if self.target_layers is not None:
            object.__setattr__(self, "target_layers", tuple(int(i) for i in self.target_layers))
        object.__setattr__(self, "phase_window", tuple(float(x) for x in self.phase_window))
        self.validate()

    def validate(self) -> None:
        if self.pathway not in PATHWAYS:
            raise ConfigError(f"unknown pathway {self.pathway!r}")
        if self.value_mode not in VALUE_MODES:
            raise ConfigError(f"unknown value mode {self.value_mode!r}")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.modality not in MODALITIES:
            raise ConfigError(f"unknown modality {self.modality!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta={self.eta} outside [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha={self.alpha} outside [0, 1]")
        if not isinstance(self.k, int) or self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k!r}")
        a, b = self.phase_window if len(self.phase_window) == 2 else (1.0, 0.0)
        if not 0.0 <= a <= b <= 1.0:
            raise ConfigError(f"phase window {self.phase_window} is not a sub-interval of [0, 1]")

    def layers(self, n_layers: int) -> tuple[int, ...]:
        layers = self.target_layers if self.target_layers is not None else (n_layers // 2,)
        for i in layers:
            if not 0 <= i < n_layers:
                raise ConfigError(f"target layer {i} outside [0, {n_layers})")
        return layers

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_layers"] = None if self.target_layers is None else list(self.target_layers)
        d["phase_window"] = list(self.phase_window)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InterventionSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown intervention keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class VerificationReport:
    layer: int
    step: int
    head: int
    mass_before: float
    mass_after: float
    reduction_factor: float

    def to_row(self) -> list:
        rf = self.reduction_factor
        return [self.layer, self.step, self.head, self.mass_before, self.mass_after,
                "inf" if math.isinf(rf) else rf]


def _indices(targets: SinkSet | Sequence[int]) -> np.ndarray:
    idx = targets.indices if isinstance(targets, SinkSet) else targets
    return np.asarray(idx, dtype=np.int64)


def apply_score_bias(logits, targets: SinkSet | Sequence[int], eta: float) -> np.ndarray:
    """Add ``log(eta)`` to the target key columns (``-1e4`` when ``eta == 0``).

    Works on a single logit vector or any array whose last axis indexes keys.
    """
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"eta={eta} outside [0, 1]")
    out = np.array(logits, dtype=np.float64, copy=True)
    idx = _indices(targets)
    n = out.shape[-1]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DomainError(f"target index outside [0, {n})")
    if eta == 1.0 or idx.size == 0:
        return out
    out[..., idx] += ABLATION_BIAS if eta == 0.0 else math.log(eta)
    return out


def apply_value_replacement(values, targets: SinkSet | Sequence[int], mode: str, alpha: float = 0.0) -> np.ndarray:
    """Replace target rows of an ``(N, d)`` value matrix.

    The mean is taken over all N rows before any replacement. ``lerp`` gives
    ``(1 - alpha) * mean + alpha * original``.
    """
    if mode not in VALUE_MODES:
        raise ConfigError(f"unknown value mode {mode!r}")
    v = np.array(values, dtype=np.float64, copy=True)
    idx = _indices(targets)
    if idx.size == 0:
        return v
    if mode == "zero":
        v[idx] = 0.0
        return v
    mean = v.mean(axis=0)
    if mode == "mean":
        v[idx] = mean
    else:
        v[idx] = (1.0 - alpha) * mean + alpha * v[idx]
    return v


def random_equal_budget(n: int, budget: int, stream: RngStream, layer: int = -1, step: int = -1) -> SinkSet:
    """``budget`` distinct key positions drawn uniformly (partial Fisher-Yates)."""
    if not 1 <= budget <= n:
        raise DomainError(f"budget={budget} outside [1, {n}]")
    pool = list(range(n))
    u = stream.uniform_array(budget)
    for i in range(budget):
        j = i + min(int(u[i] * (n - i)), n - i - 1)
        pool[i], pool[j] = pool[j], pool[i]
    return SinkSet(layer, step, -1, budget, tuple(sorted(pool[:budget])), RANDOM, n)


def phase_gate(t_norm: float, window: tuple[float, float]) -> bool:
    a, b = window
    return a <= t_norm <= b


def active_fraction(decisions: Sequence[bool]) -> float:
    if len(decisions) == 0:
        raise DomainError("empty gate log")
    return sum(bool(d) for d in decisions) / len(decisions)


def verify_reduction(before: float, after: float, layer: int = -1, step: int = -1, head: int = -1) -> VerificationReport:
    if not before > 0:
        raise DomainError(f"mass before intervention must be positive, got {before}")
    if after < 0:
        raise DomainError(f"mass after intervention must be non-negative, got {after}")
    factor = math.inf if after == 0 else before / after
    return VerificationReport(layer, step, head, float(before), float(after), factor)


def _filter_modality(idx: tuple[int, ...], modality: str, n_img: int) -> tuple[int, ...]:
    if modality == "text":
        return tuple(i for i in idx if i >= n_img)
    if modality == "image":
        return tuple(i for i in idx if i < n_img)
    return idx


class ProbeRecorder:
    """Identity path that records per-site summaries (baseline runs)."""

    def __init__(self, n_img: int, record_probes: bool = True):
        self.n_img = n_img
        self.record_probes = record_probes
        self.site_summaries: list[dict] = []

    def begin_step(self, step, t_norm):
        pass

    def attend(self, site, logits, values):
        return logits, values

    def observe(self, site: Site, probs, block_output):
        if self.record_probes:
            self.site_summaries.append(
                probe.summarize_site(site.layer, site.step, site.t_norm, probs, block_output, self.n_img))


class InterventionProcessor(ProbeRecorder):
    """Applies one :class:`InterventionSpec` during a single generation.

    Targets are chosen at each site from the current forward pass's
    pre-softmax logits. Bound to one generation; do not reuse across runs.
    """

    def __init__(self, spec: InterventionSpec, n_img: int, n_layers: int, run_seed: int = 0,
                 record_probes: bool = True):
        super().__init__(n_img, record_probes)
        spec.validate()
        self.spec = spec
        self.layers = frozenset(spec.layers(n_layers))
        self.run_seed = run_seed
        self.gate_log: list[bool] = []
        self.verification: list[VerificationReport] = []
        self.targets: list[dict] = []
        self._active = False

    @property
    def live(self) -> bool:
        return self.spec.enabled and self.spec.pathway != "none"

    def begin_step(self, step, t_norm):
        self._active = phase_gate(t_norm, self.spec.phase_window)
        self.gate_log.append(self._active)

    def _select(self, site: Site, mass: np.ndarray) -> tuple[list[tuple[int, ...]], dict]:
        spec, (H, n) = self.spec, mass.shape
        k = min(spec.k, n)
        info: dict = {"layer": site.layer, "step": site.step}
        if spec.protocol == PER_HEAD:
            sets = [probe.topk_sinks(mass[h], k, PER_HEAD, site.layer, site.step, h).indices for h in range(H)]
        elif spec.protocol == UNION_BUDGET:
            sets = [probe.union_budget_sinks(mass, k, site.layer, site.step).indices] * H
        elif spec.protocol == INDEX0:
            sets = [tuple(range(k))] * H
        else:
            stream = RngStream(spec.random_seed).child(f"{self.run_seed}:{site.layer}:{site.step}")
            chosen = random_equal_budget(n, k, stream, site.layer, site.step).indices
            sink = probe.union_budget_sinks(mass, k).indices
            info["sink_collisions"] = len(set(chosen) & set(sink))
            sets = [chosen] * H
        masked = [_filter_modality(s, spec.modality, self.n_img) for s in sets]
        info["sinks"] = [list(s) for s in sets]
        info["masked"] = [list(s) for s in masked]
        return masked, info

    def attend(self, site, logits, values):
        if not self.live or site.layer not in self.layers or not self._active:
            return logits, values
        pre = softmax_rows(logits)
        mass = probe.incoming_mass(pre, check=False)
        masked, info = self._select(site, mass)
        self.targets.append(info)
        spec = self.spec
        if spec.pathway == "score":
            new = np.array(logits, copy=True)
            for h, idx in enumerate(masked):
                new[h] = apply_score_bias(logits[h], idx, spec.eta)
            post = probe.incoming_mass(softmax_rows(new), check=False)
            for h, idx in enumerate(masked):
                if not idx:
                    continue
                ix = list(idx)
                before = float(mass[h, ix].sum())
                after = float(post[h, ix].sum())
                self.verification.append(verify_reduction(before, after, site.layer, site.step, h))
            return new, values
        new_v = np.array(values, copy=True)
        for h, idx in enumerate(masked):
            new_v[h] = apply_value_replacement(values[h], idx, spec.value_mode, spec.alpha)
        return logits, new_v

    def active_fraction(self) -> float:
        return active_fraction(self.gate_log)


def attention_processor(spec: InterventionSpec, n_img: int, n_layers: int, run_seed: int = 0,
                        record_probes: bool = True) -> InterventionProcessor:
    return InterventionProcessor(spec, n_img, n_layers, run_seed, record_probes)


def partition_check(all_masked: Iterable[int], text_masked: Iterable[int], image_masked: Iterable[int]) -> bool:
    """True iff the text-only and image-only sets partition the all-sinks set."""
    a, t, i = set(all_masked), set(text_masked), set(image_masked)
    return not (t & i) and (t | i) == a
