"""Seed-paired generation runs and append-only run-record persistence."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .. import __version__
from ..errors import ConfigError, SanityGateError, SinkLabError, VerificationGateError
from ..intervene import InterventionProcessor, InterventionSpec, ProbeRecorder
from ..proxymetrics import PROXY_NOTE, Projections, alignment_proxy, perceptual_distance
from ..toymodel import Model, ModelConfig, build_model, encode_prompt, forward_denoise
from .config import BASELINE, NOOP, ExperimentConfig

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RECORDS_FILE = "records.jsonl"
MANIFEST_FILE = "manifest.json"
FAILURES_FILE = "failures.json"
MIN_REDUCTION = 1e6


@dataclass(frozen=True)
class Population:
    """One named arm of an experiment: an intervention plus seed/model variation.

    Ordinary conditions only differ in ``spec``; calibration arms also shift
    the seed or swap the model config.
    """

    name: str
    spec: InterventionSpec
    seed_offset: int = 0
    model: ModelConfig | None = None


def noop_spec(layer: int) -> InterventionSpec:
    return InterventionSpec(pathway="score", eta=0.0, k=1, target_layers=(layer,), enabled=False)


def with_noop(config: ExperimentConfig) -> ExperimentConfig:
    """Ensure baseline and no-op lead the condition list."""
    conds = {BASELINE: config.conditions[BASELINE]}
    conds[NOOP] = config.conditions.get(NOOP, noop_spec(config.target_layer))
    for name, spec in config.conditions.items():
        conds.setdefault(name, spec)
    return config.with_conditions(conds)


def needs_verification(spec: InterventionSpec) -> bool:
    return spec.enabled and spec.pathway == "score" and spec.eta == 0.0


def image_digest(image: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(image).tobytes()).hexdigest()


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"), allow_nan=False)


def strip_wall_time(line: str) -> str:
    rec = json.loads(line)
    rec.pop("wall_time", None)
    return dumps_record(rec)


class Runner:
    """Holds the built models, prompts and metric projections for one experiment."""

    def __init__(self, config: ExperimentConfig, family: str):
        self.config = config
        self.family = family
        self.prompts = config.load_prompts()
        self.config_hash = config.config_hash()
        self._models: dict[ModelConfig, Model] = {}
        self.proj = Projections(config.model.d_model, seed=config.model.init_seed + 7)
        self.baseline_images: dict[int, np.ndarray] = {}

    def model(self, cfg: ModelConfig | None) -> Model:
        cfg = cfg or self.config.model
        if cfg not in self._models:
            self._models[cfg] = build_model(cfg)
        return self._models[cfg]

    def generate(self, pop: Population, prompt_index: int) -> tuple[dict, np.ndarray]:
        cfg = pop.model or self.config.model
        model = self.model(cfg)
        prompt = self.prompts[prompt_index]
        seed = self.config.seed_for(prompt_index) + pop.seed_offset
        if pop.name == BASELINE or (pop.spec.pathway == "none" and pop.spec.enabled):
            proc = ProbeRecorder(cfg.n_img)
        else:
            proc = InterventionProcessor(pop.spec, cfg.n_img, cfg.n_layers, run_seed=seed)
        t0 = time.perf_counter()
        out = forward_denoise(model, prompt, seed, proc)
        wall = time.perf_counter() - t0
        if isinstance(proc, InterventionProcessor) and needs_verification(pop.spec):
            bad = [v for v in proc.verification if v.reduction_factor < MIN_REDUCTION]
            if bad:
                raise VerificationGateError(
                    f"{pop.name}, prompt {prompt.id}: {len(bad)} sites below {MIN_REDUCTION:g}x reduction "
                    f"(worst {min(v.reduction_factor for v in bad):.3g}x)")
        base = self.baseline_images.get(prompt.id)
        if pop.name == BASELINE:
            base = out.image
        pixel_diff = float(np.abs(out.image - base).max()) if base is not None else None
        perceptual = perceptual_distance(out.image, base) if base is not None else None
        metrics = {
            "alignment": alignment_proxy(out.pooled_features, encode_prompt(model, prompt), self.proj.align),
            "perceptual_distance": perceptual,
            "feature_vector": [float(x) for x in self.proj.features(out.pooled_features)],
            "proxy": True,
        }
        rec = {
            "schema": SCHEMA_VERSION,
            "toolkit_version": __version__,
            "config_hash": self.config_hash,
            "family": self.family,
            "prompt_id": prompt.id,
            "seed": seed,
            "condition": pop.name,
            "spec": pop.spec.to_dict(),
            "seed_offset": pop.seed_offset,
            "model_variant": None if pop.model is None else pop.model.to_dict(),
            "metrics": metrics,
            "image_sha256": image_digest(out.image),
            "pixel_diff_max": pixel_diff,
            "probes": proc.site_summaries,
            "active_fraction": proc.active_fraction() if isinstance(proc, InterventionProcessor) else None,
            "targets": getattr(proc, "targets", []),
            "verification": [v.to_row() for v in getattr(proc, "verification", [])],
            "wall_time": round(wall, 6),
        }
        return rec, out.image


def populations_from(config: ExperimentConfig) -> list[Population]:
    return [Population(name, spec) for name, spec in config.conditions.items()]


def _load_existing(path: Path, config_hash: str) -> list[dict]:
    if not path.exists():
        return []
    recs = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    for r in recs:
        if r.get("config_hash") != config_hash:
            raise ConfigError(f"{path} holds records from a different config ({r.get('config_hash')})")
    return recs


def run_experiment(config: ExperimentConfig, family: str = "custom", out_dir: str | Path | None = None,
                   populations: Iterable[Population] | None = None) -> list[dict]:
    """Generate every (population, prompt) pair with seed ``base_seed + i`` and persist records.

    Populations run population-major with baseline and no-op first; the
    no-op sanity gate is checked before any intervention runs. Records are
    appended as they finish, so an interrupted run resumes where it stopped.
    """
    config = with_noop(config)
    pops = list(populations) if populations is not None else populations_from(config)
    names = [p.name for p in pops]
    if len(set(names)) != len(names):
        raise ConfigError("population names must be unique")
    if names[:2] != [BASELINE, NOOP]:
        raise ConfigError("baseline and noop must be the first two populations")
    runner = Runner(config, family)
    out = Path(out_dir) if out_dir is not None else None
    done: dict[tuple[str, int], dict] = {}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for r in _load_existing(out / RECORDS_FILE, runner.config_hash):
            done[(r["condition"], r["prompt_id"])] = r
        manifest = {"schema": SCHEMA_VERSION, "family": family, "config_hash": runner.config_hash,
                    "config": config.to_dict(), "populations": [_pop_dict(p) for p in pops],
                    "proxy_note": PROXY_NOTE}
        (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    records: list[dict] = []
    fh = open(out / RECORDS_FILE, "a") if out is not None else None
    try:
        for pop in pops:
            for i, prompt in enumerate(runner.prompts):
                key = (pop.name, prompt.id)
                if key in done:
                    if pop.name == BASELINE:
                        # later arms need the baseline image; regeneration is deterministic
                        runner.baseline_images[prompt.id] = runner.generate(pop, i)[1]
                    records.append(done[key])
                    continue
                try:
                    rec, image = runner.generate(pop, i)
                except SinkLabError as exc:
                    _write_failure(out, pop.name, prompt.id, exc, len(records))
                    raise
                if pop.name == BASELINE:
                    runner.baseline_images[prompt.id] = image
                records.append(rec)
                if fh is not None:
                    fh.write(dumps_record(rec) + "\n")
                    fh.flush()
            if pop.name == NOOP:
                _sanity_gate([r for r in records if r["condition"] == NOOP], out)
            log.info("%s: finished %s (%d prompts)", family, pop.name, len(runner.prompts))
    finally:
        if fh is not None:
            fh.close()
    return records


def _pop_dict(p: Population) -> dict:
    return {"name": p.name, "spec": p.spec.to_dict(), "seed_offset": p.seed_offset,
            "model": None if p.model is None else p.model.to_dict()}


def _sanity_gate(noop_records: list[dict], out: Path | None) -> None:
    bad = [r["prompt_id"] for r in noop_records if r["pixel_diff_max"] != 0.0]
    if bad:
        exc = SanityGateError(f"no-op processor changed {len(bad)} generations (prompts {bad[:5]})")
        _write_failure(out, NOOP, bad[0], exc, len(noop_records))
        raise exc


def _write_failure(out: Path | None, condition: str, prompt_id: int, exc: Exception, n_done: int) -> None:
    if out is None:
        return
    (out / FAILURES_FILE).write_text(json.dumps({
        "condition": condition, "prompt_id": prompt_id, "error": type(exc).__name__,
        "message": str(exc), "completed_records": n_done}, indent=2) + "\n")


def load_records(out_dir: str | Path) -> tuple[dict, list[dict]]:
    out = Path(out_dir)
    manifest = json.loads((out / MANIFEST_FILE).read_text())
    recs = _load_existing(out / RECORDS_FILE, manifest["config_hash"])
    return manifest, recs


def by_condition(records: Iterable[dict]) -> dict[str, list[dict]]:
    groups: dict[str, list[dict]] = {}
    for r in records:
        groups.setdefault(r["condition"], []).append(r)
    for rs in groups.values():
        rs.sort(key=lambda r: r["prompt_id"])
    return groups

