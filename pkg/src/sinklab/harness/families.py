"""Experiment families: which arms to run and how to analyse their records.

Every analysis works from persisted records alone, so ``report`` can
regenerate all outputs from a run directory.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .. import probe, stats
from ..errors import ConfigError, DomainError, PairingError
from ..intervene import RANDOM, InterventionSpec, partition_check
from ..probe import PER_HEAD, UNION_BUDGET
from ..proxymetrics import PROXY_NOTE, frechet_shift
from .config import BASELINE, NOOP, ExperimentConfig
from .report import Finding, Table, emit_report, svg_lines
from .runner import Population, by_condition, load_records, noop_spec, run_experiment, with_noop

log = logging.getLogger(__name__)

SEEDVAR = "seedvar"
TOY_NOTE = ("Values are measured on the toy model; they are recorded as-is and are not expected to match "
            "magnitudes reported for large pretrained diffusion transformers.")


@dataclass
class Analysis:
    tables: list[Table] = field(default_factory=list)
    findings: list[Finding] = field(default_factory=list)
    plots: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


@dataclass
class FamilyResult:
    family: str
    records: list[dict]
    analysis: Analysis
    out_dir: Path | None


# ---------------------------------------------------------------- helpers

def _score(layer: int, eta: float = 0.0, k: int = 1, protocol: str = PER_HEAD, **kw) -> InterventionSpec:
    return InterventionSpec(pathway="score", eta=eta, k=k, protocol=protocol, target_layers=(layer,), **kw)


def _base_pops(config: ExperimentConfig) -> list[Population]:
    return [Population(BASELINE, config.conditions[BASELINE]), Population(NOOP, noop_spec(config.target_layer))]


def _seedvar_pop(config: ExperimentConfig) -> Population:
    return Population(SEEDVAR, InterventionSpec(pathway="none"), seed_offset=config.families.calibration_seed_offset)


def _ids(recs: list[dict], by_prompt_only: bool = False) -> list:
    return [r["prompt_id"] if by_prompt_only else (r["prompt_id"], r["seed"]) for r in recs]


def _metric(recs: list[dict], name: str) -> np.ndarray:
    return np.array([r["metrics"][name] for r in recs], dtype=np.float64)


def _features(recs: list[dict]) -> np.ndarray:
    return np.array([r["metrics"]["feature_vector"] for r in recs], dtype=np.float64)


def _fshift(a: list[dict], b: list[dict]) -> float | None:
    if len(a) < 2 or len(b) < 2:
        return None
    return frechet_shift(_features(a), _features(b))


def _deltas(cond: list[dict], base: list[dict], metric: str, by_prompt_only: bool = False) -> np.ndarray:
    """Paired metric differences; raises PairingError on any id mismatch."""
    return stats.paired_diffs(_metric(cond, metric), _metric(base, metric),
                              _ids(cond, by_prompt_only), _ids(base, by_prompt_only))


def _pstat(deltas: np.ndarray, config: ExperimentConfig, one_sided: bool = False) -> stats.PairedStat:
    s = config.stats
    return stats.paired_stat(deltas, s.n_resamples, s.ci_level, s.seed, one_sided)


def _verif_summary(recs: list[dict]) -> tuple[int, float | None, float | None, float | None]:
    rows = [v for r in recs for v in r["verification"]]
    if not rows:
        return 0, None, None, None
    before = float(np.mean([v[3] for v in rows]))
    after = float(np.mean([v[4] for v in rows]))
    factors = [math.inf if v[5] == "inf" else v[5] for v in rows]
    return len(rows), before, after, float(min(factors))


def resolve_margin(config: ExperimentConfig, groups: dict[str, list[dict]]) -> tuple[float, str]:
    m = config.stats.equivalence_margin
    if m != "auto":
        return float(m), "configured"
    if SEEDVAR not in groups:
        raise ConfigError('equivalence_margin "auto" needs the seed-variation population')
    d = _deltas(groups[SEEDVAR], groups[BASELINE], "alignment", by_prompt_only=True)
    ps = _pstat(d, config)
    half = (ps.ci_high - ps.ci_low) / 2.0
    if half <= 0:
        raise DomainError("seed-variation noise floor is zero; cannot derive a margin")
    return 2.0 * half, "auto (2x seed-variation CI half-width)"


def _maybe_seedvar(config: ExperimentConfig) -> list[Population]:
    return [_seedvar_pop(config)] if config.stats.equivalence_margin == "auto" else []


def _sanity_table(groups: dict[str, list[dict]]) -> Table:
    t = Table("sanity_noop", ["comparison", "n_pairs", "pixel_identical", "max_pixel_diff",
                              "perceptual_distance_mean", "frechet_shift"],
              footer="no-op = intervention processor installed with enabled=false")
    noop, base = groups[NOOP], groups[BASELINE]
    stats.check_pairing(_ids(noop), _ids(base), len(noop), len(base))
    diffs = [r["pixel_diff_max"] for r in noop]
    t.add("baseline vs noop", len(noop), sum(d == 0.0 for d in diffs), float(max(diffs)),
          float(np.mean(_metric(noop, "perceptual_distance"))), _fshift(noop, base))
    return t


def _effects_table(name: str, config: ExperimentConfig, groups: dict[str, list[dict]], conds: list[str],
                   margin: float, footer: str, label: Callable[[str, dict], list] | None = None,
                   label_cols: tuple[str, ...] = ("condition",)) -> tuple[Table, dict[str, stats.PairedStat]]:
    base = groups[BASELINE]
    cols = [*label_cols, "n", "delta_alignment", "ci_low", "ci_high", "p_t", "p_holm", "equivalence",
            "perceptual_distance_mean", "frechet_shift", "pixel_identical"]
    t = Table(name, cols, footer=footer)
    pstats = {c: _pstat(_deltas(groups[c], base, "alignment"), config) for c in conds}
    holm = stats.holm_correction([pstats[c].p_t for c in conds]) if conds else []
    for c, p_adj in zip(conds, holm):
        ps, recs = pstats[c], groups[c]
        lab = label(c, recs[0]["spec"]) if label else [c]
        t.add(*lab, ps.n, ps.mean, ps.ci_low, ps.ci_high, ps.p_t, float(p_adj),
              stats.equivalence_check(ps, margin), float(np.mean(_metric(recs, "perceptual_distance"))),
              _fshift(recs, base), sum(r["pixel_diff_max"] == 0.0 for r in recs))
    return t, pstats


def _verification_table(name: str, groups: dict[str, list[dict]], conds: list[str]) -> Table:
    t = Table(name, ["condition", "layers", "n_sites", "mass_before_mean", "mass_after_mean",
                     "min_reduction_factor"],
              footer="per-site target mass before/after the score-path bias, averaged over heads, steps, prompts")
    for c in conds:
        recs = groups[c]
        n, before, after, rf = _verif_summary(recs)
        if n:
            layers = " ".join(str(x) for x in sorted({v[0] for r in recs for v in r["verification"]}))
            t.add(c, layers, n, before, after, rf)
    return t


# ---------------------------------------------------------------- observe

def build_observe(config: ExperimentConfig) -> list[Population]:
    return _base_pops(config)


def analyze_observe(config: ExperimentConfig, groups: dict[str, list[dict]]) -> Analysis:
    a = Analysis(notes=[TOY_NOTE, PROXY_NOTE])
    base = groups[BASELINE]
    cfg = config.model
    sites: dict[tuple[int, int], list[dict]] = {}
    for r in base:
        for s in r["probes"]:
            sites.setdefault((s["layer"], s["step"]), []).append(s)
    layer_t = Table("h1_layer_summary", ["layer", "max_mass_mean", "max_mass_min_step", "max_mass_max_step",
                                         "entropy_mean", "top5_mean", "act_max_mean", "act_p95_mean",
                                         "index0_overlap", "text_sink_fraction", "uniform_mass"],
                    footer="per-head dynamic top-1 sinks, averaged over prompts and steps; " + TOY_NOTE)
    curve_t = Table("h1_curves", ["layer", "step", "t_norm", "max_mass", "entropy_mean", "top5", "act_max"],
                    footer="prompt-averaged per-(layer, step) statistics")
    mm_series: dict[str, list] = {}
    ent_series: dict[str, list] = {}
    for layer in range(cfg.n_layers):
        steps = sorted(s for (l, s) in sites if l == layer)
        per_step = []
        top1_sets = []
        for step in steps:
            ss = sites[(layer, step)]
            row = [float(np.mean([s[k] for s in ss])) for k in ("max_mass", "entropy_mean", "top5", "act_max")]
            per_step.append((ss[0]["t_norm"], *row))
            curve_t.add(layer, step, ss[0]["t_norm"], *row)
            for s in ss:
                top1_sets += [probe.SinkSet(layer, step, h, 1, (i,)) for h, i in enumerate(s["top1"])]
        if not per_step:
            continue
        all_sites = [s for step in steps for s in sites[(layer, step)]]
        mm = [p[1] for p in per_step]
        text_frac = float(np.mean([probe.modality_attribution(s, cfg.n_img, cfg.n_txt)["text_count"]
                                   for s in top1_sets]))
        layer_t.add(layer, float(np.mean(mm)), float(min(mm)), float(max(mm)),
                    float(np.mean([s["entropy_mean"] for s in all_sites])),
                    float(np.mean([s["top5"] for s in all_sites])),
                    float(np.mean([s["act_max"] for s in all_sites])),
                    float(np.mean([s["act_p95"] for s in all_sites])),
                    probe.index0_overlap(top1_sets), text_frac, 1.0 / cfg.seq_len)
        mm_series[f"layer {layer}"] = [(p[0], p[1]) for p in per_step]
        ent_series[f"layer {layer}"] = [(p[0], p[2]) for p in per_step]
    a.tables += [layer_t, curve_t, _sanity_table(groups)]
    if config.output.plots and mm_series:
        a.plots["max_mass_vs_t"] = svg_lines("MaxMass vs t/T", mm_series, "t/T (0 = noisiest)", "MaxMass")
        a.plots["entropy_vs_t"] = svg_lines("Attention entropy vs t/T", ent_series, "t/T (0 = noisiest)",
                                            "entropy (nats)")
    if layer_t.rows:
        peak = max(layer_t.rows, key=lambda r: r[1])
        a.findings += [
            Finding("Which layer concentrates attention most?", f"layer {peak[0]}",
                    f"MaxMass {peak[1]:.4g} vs uniform {1.0 / cfg.seq_len:.4g}"),
            Finding("Do dynamic sinks coincide with index 0?",
                    "yes" if np.mean(layer_t.column("index0_overlap")) > 0.5 else "no",
                    f"mean index-0 overlap {np.mean(layer_t.column('index0_overlap')):.3g}"),
            Finding("Do top-1 sinks fall on text tokens?",
                    "mostly" if np.mean(layer_t.column("text_sink_fraction")) > 0.5 else "mostly not",
                    f"text fraction {np.mean(layer_t.column('text_sink_fraction')):.3g}"),
        ]
    return a


# ---------------------------------------------------------------- intervene

def build_intervene(config: ExperimentConfig, only: str | None = None) -> list[Population]:
    extra = [n for n in config.conditions if n not in (BASELINE, NOOP)]
    if only is not None:
        if only not in config.conditions:
            raise ConfigError(f"unknown condition {only!r}")
        extra = [only]
    if not extra:
        raise ConfigError("intervene needs at least one non-baseline condition")
    return _base_pops(config) + [Population(n, config.conditions[n]) for n in extra] + _maybe_seedvar(config)


def _intervention_conditions(groups: dict[str, list[dict]]) -> list[str]:
    return [c for c in groups if c not in (BASELINE, NOOP, SEEDVAR)]


def analyze_intervene(config: ExperimentConfig, groups: dict[str, list[dict]]) -> Analysis:
    a = Analysis(notes=[PROXY_NOTE])
    margin, how = resolve_margin(config, groups)
    conds = _intervention_conditions(groups)
    t, pstats = _effects_table("intervention_effects", config, groups, conds, margin,
                               f"delta = condition - baseline on the alignment proxy; margin {margin:.4g} ({how})")
    a.tables += [t, _verification_table("verification", groups, conds), _sanity_table(groups)]
    worst = max(conds, key=lambda c: abs(pstats[c].mean))
    a.findings.append(Finding("Does sink removal change alignment beyond the margin?",
                              "no" if all(r[t.columns.index("equivalence")] != stats.EXCEEDS for r in t.rows)
                              else "yes",
                              f"largest |delta| {abs(pstats[worst].mean):.3g} ({worst}); margin {margin:.3g}"))
    return a


# ---------------------------------------------------------------- sweep

def _value_spec(token: str, layer: int) -> InterventionSpec:
    if token.startswith("lerp_"):
        return InterventionSpec(pathway="value", value_mode="lerp", alpha=float(token[5:]), k=1,
                                target_layers=(layer,))
    if token in ("mean", "zero"):
        return InterventionSpec(pathway="value", value_mode=token, k=1, target_layers=(layer,))
    raise ConfigError(f"unknown value-sweep point {token!r}")


def build_sweep(config: ExperimentConfig) -> list[Population]:
    fam, layer = config.families, config.target_layer
    if not fam.eta_grid and not fam.value_grid:
        raise ConfigError("sweep grids are empty")
    pops = _base_pops(config)
    pops += [Population(f"eta_{eta!r}", _score(layer, eta)) for eta in fam.eta_grid]
    pops += [Population(f"value_{tok}", _value_spec(tok, layer)) for tok in fam.value_grid]
    return pops + _maybe_seedvar(config)


def analyze_sweep(config: ExperimentConfig, groups: dict[str, list[dict]]) -> Analysis:
    a = Analysis(notes=[PROXY_NOTE])
    margin, how = resolve_margin(config, groups)
    score = [c for c in groups if c.startswith("eta_")]
    value = [c for c in groups if c.startswith("value_")]
    base = groups[BASELINE]
    st = Table("score_sweep", ["eta", "n", "delta_alignment", "ci_low", "ci_high", "p_t", "ci_contains_zero",
                               "sink_mass_before", "sink_mass_after", "perceptual_distance_mean"],
               footer=f"per-head top-1 score-path suppression at layer {config.target_layer}")
    for c in score:
        ps = _pstat(_deltas(groups[c], base, "alignment"), config)
        _, before, after, _ = _verif_summary(groups[c])
        st.add(groups[c][0]["spec"]["eta"], ps.n, ps.mean, ps.ci_low, ps.ci_high, ps.p_t, ps.ci_contains_zero(),
               before, after, float(np.mean(_metric(groups[c], "perceptual_distance"))))
    vt = Table("value_sweep", ["mode", "n", "delta_alignment", "ci_low", "ci_high", "p_t", "ci_contains_zero",
                               "perceptual_distance_mean"],
               footer=f"per-head top-1 value replacement at layer {config.target_layer}")
    for c in value:
        ps = _pstat(_deltas(groups[c], base, "alignment"), config)
        vt.add(c[len("value_"):], ps.n, ps.mean, ps.ci_low, ps.ci_high, ps.p_t, ps.ci_contains_zero(),
               float(np.mean(_metric(groups[c], "perceptual_distance"))))
    ft = Table("flatness", ["curve", "all_ci_contain_zero", "max_abs_delta", "margin", "practically_flat"],
               footer=f"flat = every 95% CI contains zero and max |mean delta| < margin ({how})")
    for name, t in (("score", st), ("value", vt)):
        if not t.rows:
            continue
        all_zero = all(t.column("ci_contains_zero"))
        mx = float(max(abs(x) for x in t.column("delta_alignment")))
        ft.add(name, all_zero, mx, margin, all_zero and mx < margin)
    a.tables += [st, vt, ft, _sanity_table(groups)]
    for r in ft.rows:
        a.findings.append(Finding(f"Is the {r[0]}-path dose-response flat?", "yes" if r[4] else "no",
                                  f"max |delta| {r[2]:.3g}, all CIs contain 0: {r[1]}"))
    return a


# ---------------------------------------------------------------- ksweep

def build_ksweep(config: ExperimentConfig) -> list[Population]:
    config.check_budgets(config.families.ksweep_grid)
    layer = config.target_layer
    pops = _base_pops(config) + [Population(f"sink_k{k}", _score(layer, 0.0, k, UNION_BUDGET))
                                 for k in config.families.ksweep_grid]
    return pops + _maybe_seedvar(config)


def analyze_ksweep(config: ExperimentConfig, groups: dict[str, list[dict]]) -> Analysis:
    a = Analysis(notes=[PROXY_NOTE])
    margin, how = resolve_margin(config, groups)
    conds = [c for c in groups if c.startswith("sink_k")]
    t, _ = _effects_table("k_sweep", config, groups, conds, margin,
                          f"union-budget top-k removal (eta=0) at layer {config.target_layer}; Holm across budgets; "
                          f"margin {margin:.4g} ({how})",
                          label=lambda c, spec: [spec["k"], "top_sink"], label_cols=("k", "mode"))
    a.tables += [t, _verification_table("verification", groups, conds), _sanity_table(groups)]
    ci0 = all(lo <= 0 <= hi for lo, hi in zip(t.column("ci_low"), t.column("ci_high")))
    a.findings.append(Finding("Is alignment robust across masking budgets?", "yes" if ci0 else "no",
                              f"all CIs contain zero: {ci0}"))
    return a


# ---------------------------------------------------------------- specificity

def build_specificity(config: ExperimentConfig) -> list[Population]:
    grid = sorted(config.families.specificity_grid)
    config.check_budgets(grid)
    layer = config.target_layer
    pops = _base_pops(config)
    for k in grid:
        pops.append(Population(f"sink_k{k}", _score(layer, 0.0, k, UNION_BUDGET)))
        pops.append(Population(f"rand_k{k}", _score(layer, 0.0, k, RANDOM,
                                                    random_seed=config.families.random_seed)))
    return pops


SPECIFICITY_METRICS = (("alignment", "less"), ("perceptual_distance", "greater"))


def _budgets(groups: dict[str, list[dict]]) -> list[int]:
    return sorted(int(c[len("sink_k"):]) for c in groups if c.startswith("sink_k"))


def specificity_d(groups: dict[str, list[dict]], k: int, metric: str) -> tuple[np.ndarray, list]:
    """Per-pair ``(sink - base) - (rand - base)`` for one budget and metric."""
    base = groups[BASELINE]
    sink, rand = groups[f"sink_k{k}"], groups[f"rand_k{k}"]
    d_sink = _deltas(sink, base, metric)
    d_rand = _deltas(rand, base, metric)
    return stats.paired_diffs(d_sink, d_rand, _ids(sink), _ids(rand)), _ids(sink)


def analyze_specificity(config: ExperimentConfig, groups: dict[str, list[dict]]) -> Analysis:
    a = Analysis(notes=[PROXY_NOTE])
    s = config.stats
    grid = _budgets(groups)
    t = Table("sink_vs_random", ["k", "metric", "mean_sink", "mean_rand", "delta_delta", "ci_low", "ci_high",
                                 "alternative", "p_one_sided", "p_holm"],
              footer="union-budget sink masking vs equal-budget random masking (eta=0); "
                     "d_i = (sink_i - base_i) - (rand_i - base_i); Holm across budgets per metric")
    base = groups[BASELINE]
    for metric, alt in SPECIFICITY_METRICS:
        rows = []
        for k in grid:
            d, ids = specificity_d(groups, k, metric)
            res = stats.diff_of_diffs(d, np.zeros_like(d), ids, ids, s.n_resamples, s.ci_level, s.seed, alt)
            rows.append([k, metric, float(np.mean(_deltas(groups[f"sink_k{k}"], base, metric))),
                         float(np.mean(_deltas(groups[f"rand_k{k}"], base, metric))), res.dd, res.ci_low,
                         res.ci_high, alt, res.p_one_sided])
        for row, p_adj in zip(rows, stats.holm_correction([r[-1] for r in rows])):
            t.add(*row, float(p_adj))
    a.tables.append(t)
    if len(grid) >= 2:
        ref = config.families.trend_reference_k
        ref = grid[0] if ref is None or ref not in grid else ref
        hi_k = grid[-1]
        tt = Table("trend", ["k_high", "k_ref", "metric", "delta_d", "ci_low", "ci_high", "alternative",
                             "p_one_sided", "p_t"],
                   footer="delta_d_i = d_i(k_high) - d_i(k_ref); one-sided test in the metric's harm direction")
        for metric, alt in SPECIFICITY_METRICS:
            d_hi, ids_hi = specificity_d(groups, hi_k, metric)
            d_lo, ids_lo = specificity_d(groups, ref, metric)
            ps = stats.trend_test(d_hi, d_lo, ids_hi, ids_lo, s.n_resamples, s.ci_level, s.seed, alt)
            tt.add(hi_k, ref, metric, ps.mean, ps.ci_low, ps.ci_high, alt, ps.p_one_sided, ps.p_t)
        a.tables.append(tt)
    ct = Table("random_collisions", ["k", "mean_collisions_per_site", "sites"],
               footer="random control draws over all key positions; collisions = overlap with the sink set")
    for k in grid:
        col = [x["sink_collisions"] for r in groups[f"rand_k{k}"] for x in r["targets"]]
        ct.add(k, float(np.mean(col)) if col else 0.0, len(col))
    a.tables += [ct, _verification_table("verification", groups,
                                         [c for c in groups if c.startswith(("sink_k", "rand_k"))]),
                 _sanity_table(groups)]
    for row in t.rows:
        if row[1] == "perceptual_distance":
            a.findings.append(Finding(f"Is perceptual drift sink-specific at k={row[0]}?",
                                      "yes" if row[5] > 0 else "no",
                                      f"delta-delta {row[4]:.3g} [{row[5]:.3g}, {row[6]:.3g}]"))
    return a


# ---------------------------------------------------------------- robustness

def build_robustness(config: ExperimentConfig) -> list[Population]:
    n = config.model.n_layers
    mid = config.target_layer
    config.check_budgets([config.families.attribution_k])
    multi = tuple(sorted({0, mid, n - 1}))
    pops = _base_pops(config)
    pops.append(Population("single_layer", _score(mid)))
    pops.append(Population("multi_layer", InterventionSpec(pathway="score", eta=0.0, k=1, target_layers=multi)))
    for name, window in config.families.phase_windows.items():
        pops.append(Population(f"phase_{name}", _score(mid, phase_window=window)))
    pops.append(Population("phase_full", _score(mid, phase_window=(0.0, 1.0))))
    k = config.families.attribution_k
    for mod in ("all", "text", "image"):
        pops.append(Population(f"attr_{mod}", _score(mid, 0.0, k, modality=mod)))
    return pops + _maybe_seedvar(config)


def analyze_robustness(config: ExperimentConfig, groups: dict[str, list[dict]]) -> Analysis:
    a = Analysis(notes=[PROXY_NOTE])
    margin, _ = resolve_margin(config, groups)
    ml, _ = _effects_table("multi_layer", config, groups, ["single_layer", "multi_layer"], margin,
                           "per-head top-1 removal (eta=0); multi = first, middle, last layer")
    phases = [c for c in groups if c.startswith("phase_")]
    pt, _ = _effects_table("phase", config, groups, phases, margin, "intervention gated to closed t/T windows",
                           label=lambda c, spec: [c[len("phase_"):], spec["phase_window"][0],
                                                  spec["phase_window"][1]],
                           label_cols=("window", "t_from", "t_to"))
    pt.columns.append("active_fraction")
    for row, c in zip(pt.rows, phases):
        fr = {r["active_fraction"] for r in groups[c]}
        row.append(fr.pop() if len(fr) == 1 else float(np.mean(list(fr))))
    full_eq = [r1["image_sha256"] == r2["image_sha256"]
               for r1, r2 in zip(groups["phase_full"], groups["single_layer"])]
    at = Table("attribution", ["mode", "masked_text", "masked_image", "perceptual_distance_mean",
                               "delta_alignment", "ci_low", "ci_high"],
               footer=f"per-head top-{config.families.attribution_k} sinks filtered by modality before removal")
    for mod in ("all", "text", "image"):
        recs = groups[f"attr_{mod}"]
        txt = img = 0
        for r in recs:
            for site in r["targets"]:
                for idx in site["masked"]:
                    txt += sum(i >= config.model.n_img for i in idx)
                    img += sum(i < config.model.n_img for i in idx)
        ps = _pstat(_deltas(recs, groups[BASELINE], "alignment"), config)
        at.add(mod, txt, img, float(np.mean(_metric(recs, "perceptual_distance"))), ps.mean, ps.ci_low, ps.ci_high)
    ok = []
    for ra, rt, ri in zip(groups["attr_all"], groups["attr_text"], groups["attr_image"]):
        if not (ra["targets"] and rt["targets"] and ri["targets"]):
            continue
        first = [x["targets"][0] for x in (ra, rt, ri)]
        same_sinks = first[0]["sinks"] == first[1]["sinks"] == first[2]["sinks"]
        ok.append(same_sinks and all(partition_check(*hs) for hs in
                                     zip(first[0]["masked"], first[1]["masked"], first[2]["masked"])))
    ct = Table("robustness_checks", ["check", "passed", "total"])
    ct.add("phase_full == single_layer (image hash)", sum(full_eq), len(full_eq))
    ct.add("text/image masked sets partition all-sinks set (first site)", sum(ok), len(ok))
    a.tables += [ml, pt, at, ct, _sanity_table(groups)]
    a.findings.append(Finding("Does the full phase window match the ungated intervention?",
                              "yes" if all(full_eq) else "no", f"{sum(full_eq)}/{len(full_eq)} identical images"))
    return a


# ---------------------------------------------------------------- calibrate

def build_calibrate(config: ExperimentConfig) -> list[Population]:
    fam = config.families
    none = InterventionSpec(pathway="none")
    return _base_pops(config) + [
        _seedvar_pop(config),
        Population("steps_half", none, model=replace(config.model, step_rule="residual_half")),
        Population("cond_strength", none, model=replace(config.model, cond_strength=fam.calibration_cond_strength)),
    ]


def analyze_calibrate(config: ExperimentConfig, groups: dict[str, list[dict]]) -> Analysis:
    a = Analysis(notes=[PROXY_NOTE])
    base = groups[BASELINE]
    t = Table("calibration", ["comparison", "n", "frechet_shift", "perceptual_distance_mean",
                              "delta_alignment", "ci_half_width"],
              footer="baseline populations differing only in the named setting; paired by prompt id")
    t.add("identical seeds", len(base), _fshift(base, base), 0.0, 0.0, 0.0)
    for c, label in ((SEEDVAR, "seed variation (same settings)"), ("steps_half", "steps T -> T/2"),
                     ("cond_strength", f"conditioning strength x{config.families.calibration_cond_strength:g}")):
        if c not in groups:
            continue
        recs = groups[c]
        ps = _pstat(_deltas(recs, base, "alignment", by_prompt_only=True), config)
        t.add(label, len(recs), _fshift(recs, base), float(np.mean(_metric(recs, "perceptual_distance"))),
              ps.mean, (ps.ci_high - ps.ci_low) / 2.0)
    margin, _ = resolve_margin(replace(config, stats=replace(config.stats, equivalence_margin="auto")), groups)
    mt = Table("auto_margin", ["source", "margin"], footer="margin = 2 x seed-variation CI half-width")
    mt.add("seed variation", margin)
    a.tables += [t, mt, _sanity_table(groups)]
    a.findings.append(Finding("What is the seed-variation noise floor?", f"{margin / 2:.3g}",
                              f"derived equivalence margin {margin:.3g}"))
    return a


# ---------------------------------------------------------------- sanity

def build_sanity(config: ExperimentConfig) -> list[Population]:
    return _base_pops(config)


def analyze_sanity(config: ExperimentConfig, groups: dict[str, list[dict]]) -> Analysis:
    t = _sanity_table(groups)
    row = t.rows[0]
    return Analysis([t], [Finding("Is the no-op processor pixel-identical?",
                                  "yes" if row[2] == row[1] else "no", f"{row[2]}/{row[1]} pairs identical")])


FAMILIES: dict[str, tuple[Callable, Callable]] = {
    "observe": (build_observe, analyze_observe),
    "intervene": (build_intervene, analyze_intervene),
    "sweep": (build_sweep, analyze_sweep),
    "ksweep": (build_ksweep, analyze_ksweep),
    "specificity": (build_specificity, analyze_specificity),
    "robustness": (build_robustness, analyze_robustness),
    "calibrate": (build_calibrate, analyze_calibrate),
    "sanity": (build_sanity, analyze_sanity),
}


def effective_config(config: ExperimentConfig, pops: list[Population]) -> ExperimentConfig:
    return with_noop(config.with_conditions({p.name: p.spec for p in pops}))


def analyze(family: str, config: ExperimentConfig, records: list[dict]) -> Analysis:
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}")
    if not records:
        raise DomainError("no records to analyse")
    groups = by_condition(records)
    base = groups.get(BASELINE)
    if not base:
        raise PairingError("records contain no baseline")
    return FAMILIES[family][1](config, groups)


def run_family(family: str, config: ExperimentConfig, out_dir: str | Path | None = None,
               only: str | None = None) -> FamilyResult:
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}")
    build = FAMILIES[family][0]
    pops = build(config, only) if family == "intervene" else build(config)
    eff = effective_config(config, pops)
    out = Path(out_dir) if out_dir is not None else None
    records = run_experiment(eff, family, out, pops)
    analysis = analyze(family, eff, records)
    if out is not None:
        emit_report(out, family, analysis.tables, analysis.findings, analysis.plots, analysis.notes)
    return FamilyResult(family, records, analysis, out)


def regenerate_report(out_dir: str | Path) -> Analysis:
    manifest, records = load_records(out_dir)
    config = ExperimentConfig.from_dict(manifest["config"])
    analysis = analyze(manifest["family"], config, records)
    emit_report(out_dir, manifest["family"], analysis.tables, analysis.findings, analysis.plots, analysis.notes)
    return analysis
