"""Experiment configuration: one JSON document, unknown keys rejected."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..intervene import InterventionSpec
from ..toymodel import ModelConfig, Prompt
from .prompts import load_prompt_file, synthetic_prompts

BASELINE = "baseline"
NOOP = "noop"
METRICS = ("alignment", "perceptual_distance", "frechet_shift")

DEFAULT_ETA_GRID = (1.0, 0.5, 0.25, 0.1, 0.01, 0.0)
DEFAULT_VALUE_GRID = ("lerp_0.5", "lerp_0.0", "mean", "zero")
DEFAULT_PHASE_WINDOWS = {"early": (0.0, 0.2), "middle": (0.4, 0.6), "late": (0.8, 1.0)}


def _reject_unknown(section: str, d: dict, known) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")


@dataclass(frozen=True)
class PromptConfig:
    count: int = 64
    seed: int = 0
    path: str | None = None


@dataclass(frozen=True)
class StatsConfig:
    n_resamples: int = 1000
    ci_level: float = 0.95
    # a fixed margin, or "auto" to derive it from the seed-variation noise floor
    equivalence_margin: float | str = 0.002
    seed: int = 0


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/default"
    plots: bool = True


@dataclass(frozen=True)
class FamilyConfig:
    """Grids and knobs for the built-in experiment families."""

    eta_grid: tuple[float, ...] = DEFAULT_ETA_GRID
    value_grid: tuple[str, ...] = DEFAULT_VALUE_GRID
    ksweep_grid: tuple[int, ...] = (1, 5, 10, 20, 50)
    specificity_grid: tuple[int, ...] = (1, 5)
    trend_reference_k: int | None = None  # None: smallest budget in the grid
    phase_windows: dict = field(default_factory=lambda: dict(DEFAULT_PHASE_WINDOWS))
    attribution_k: int = 5
    random_seed: int = 12345
    calibration_seed_offset: int = 100_000
    calibration_cond_strength: float = 1.5
    layer: int | None = None  # None: the model's middle layer


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    model: ModelConfig = field(default_factory=ModelConfig)
    prompts: PromptConfig = field(default_factory=PromptConfig)
    base_seed: int = 0
    conditions: dict[str, InterventionSpec] = field(
        default_factory=lambda: {BASELINE: InterventionSpec(pathway="none")})
    metrics: tuple[str, ...] = METRICS
    stats: StatsConfig = field(default_factory=StatsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    families: FamilyConfig = field(default_factory=FamilyConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if BASELINE not in self.conditions:
            raise ConfigError('conditions must include "baseline"')
        if self.conditions[BASELINE].pathway != "none":
            raise ConfigError('the "baseline" condition must use pathway "none"')
        for name, spec in self.conditions.items():
            spec.layers(self.model.n_layers)
            if spec.k > self.model.seq_len:
                raise ConfigError(f"condition {name!r}: k={spec.k} exceeds sequence length")
        bad = set(self.metrics) - set(METRICS)
        if bad:
            raise ConfigError(f"unknown metrics {sorted(bad)}")
        if self.prompts.count < 1 and self.prompts.path is None:
            raise ConfigError("need at least one prompt")
        if self.base_seed < 0:
            raise ConfigError("base_seed must be non-negative")
        m = self.stats.equivalence_margin
        if not (m == "auto" or (isinstance(m, (int, float)) and m > 0)):
            raise ConfigError('equivalence_margin must be positive or "auto"')
        if self.stats.n_resamples < 1 or not 0 < self.stats.ci_level < 1:
            raise ConfigError("invalid stats section")
        if self.families.layer is not None and not 0 <= self.families.layer < self.model.n_layers:
            raise ConfigError(f"families.layer={self.families.layer} outside the model")
        for name, (a, b) in self.families.phase_windows.items():
            if not 0.0 <= a <= b <= 1.0:
                raise ConfigError(f"phase window {name!r} invalid")

    @property
    def target_layer(self) -> int:
        return self.families.layer if self.families.layer is not None else self.model.middle_layer

    def load_prompts(self) -> list[Prompt]:
        if self.prompts.path:
            return load_prompt_file(self.prompts.path, self.model.n_txt, self.model.vocab)
        return synthetic_prompts(self.prompts.count, self.prompts.seed, self.model.n_txt, self.model.vocab)

    def check_budgets(self, budgets) -> None:
        for k in budgets:
            if not 1 <= k <= self.model.seq_len:
                raise ConfigError(f"budget {k} outside [1, {self.model.seq_len}]")

    def seed_for(self, prompt_index: int) -> int:
        return self.base_seed + prompt_index

    def with_conditions(self, conditions: dict[str, InterventionSpec]) -> "ExperimentConfig":
        return replace(self, conditions=dict(conditions))

    def to_dict(self) -> dict:
        fam = {f.name: getattr(self.families, f.name) for f in fields(FamilyConfig)}
        fam = {k: (list(v) if isinstance(v, tuple) else v) for k, v in fam.items()}
        fam["phase_windows"] = {k: list(v) for k, v in self.families.phase_windows.items()}
        return {
            "name": self.name,
            "model": self.model.to_dict(),
            "prompts": {"count": self.prompts.count, "seed": self.prompts.seed, "path": self.prompts.path},
            "base_seed": self.base_seed,
            "conditions": [{"name": n, **s.to_dict()} for n, s in self.conditions.items()],
            "metrics": list(self.metrics),
            "stats": {"n_resamples": self.stats.n_resamples, "ci_level": self.stats.ci_level,
                      "equivalence_margin": self.stats.equivalence_margin, "seed": self.stats.seed},
            "output": {"dir": self.output.dir, "plots": self.output.plots},
            "families": fam,
        }

    def config_hash(self) -> str:
        """Hash of everything that affects records (the output section is excluded)."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d)
        _reject_unknown("config", d, [f.name for f in fields(cls)])
        kw: dict = {}
        for key in ("name", "base_seed"):
            if key in d:
                kw[key] = d[key]
        if "model" in d:
            kw["model"] = ModelConfig.from_dict(d["model"])
        for key, typ in (("prompts", PromptConfig), ("stats", StatsConfig), ("output", OutputConfig)):
            if key in d:
                _reject_unknown(key, d[key], [f.name for f in fields(typ)])
                kw[key] = typ(**d[key])
        if "families" in d:
            fam = d["families"]
            _reject_unknown("families", fam, [f.name for f in fields(FamilyConfig)])
            for key in ("eta_grid", "value_grid", "ksweep_grid", "specificity_grid"):
                if key in fam:
                    fam[key] = tuple(fam[key])
            if "phase_windows" in fam:
                fam["phase_windows"] = {k: tuple(v) for k, v in fam["phase_windows"].items()}
            kw["families"] = FamilyConfig(**fam)
        if "metrics" in d:
            kw["metrics"] = tuple(d["metrics"])
        if "conditions" in d:
            conds: dict[str, InterventionSpec] = {}
            for item in d["conditions"]:
                item = dict(item)
                name = item.pop("name", None)
                if not name:
                    raise ConfigError("every condition needs a name")
                if name in conds:
                    raise ConfigError(f"duplicate condition name {name!r}")
                conds[name] = InterventionSpec.from_dict(item)
            kw["conditions"] = conds
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(raw)
