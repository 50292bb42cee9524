"""Repeated seeded benchmark runs, MAE scoring, confidence bounds and significance."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .baselines import cl_estimate, gs_estimate, sr_estimate
from .datamodel import DatasetSchema, ingest_csv
from .learners import BoostedConfig, learner_from_dict, learner_to_dict
from .mdba import MdbaConfig, estimate_bias
from .metrics import mae
from .simulate import ScenarioSpec, SimulatedWorld, build_world, make_synthetic_dataset

logger = logging.getLogger(__name__)

BASE_METHODS = ("MDBA", "MDBA-Naive", "SR", "GS", "CL")
STAR_LEVELS = ((0.01, "***"), (0.05, "**"), (0.1, "*"))


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic", "n": 12000, "seed": 0})
    dataset_name: str = "synthetic"
    prevalences: list[float] = field(default_factory=lambda: [0.2, 0.3])
    bias_kinds: list[str] = field(default_factory=lambda: ["correct", "incorrect"])
    gs_sizes: list[int] = field(default_factory=lambda: [100, 200, 300, 400])
    iterations: int = 20
    confidence: float = 0.95
    methods: list[str] = field(default_factory=lambda: ["MDBA", "SR", "GS", "CL"])
    significance: str = "paired-t"
    base_seed: int = 0
    n_humans: int = 10
    reserve_per_group: int = 400
    learner: dict = field(default_factory=lambda: learner_to_dict(BoostedConfig()))
    mdba: dict = field(default_factory=lambda: {"c": 1.0, "rpr_tol": 0.05, "rescale_by_c": True})
    scenario: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must be in (0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.significance not in ("paired-t", "wilcoxon"):
            raise ValueError(f"unknown significance test {self.significance!r}")
        for m in self.methods:
            if method_base(m) not in BASE_METHODS:
                raise ValueError(f"unknown method {m!r}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("method names must be unique")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def method_base(name: str) -> str:
    """``"label=BASE"`` runs BASE under another label; plain names are their own base."""
    return name.split("=", 1)[1] if "=" in name else name


def method_label(name: str) -> str:
    return name.split("=", 1)[0]


# --------------------------------------------------------------------------
# statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SignificanceResult:
    p_value: float
    kind: str
    degenerate: bool = False


def significance_test(a: Sequence[float], b: Sequence[float], kind: str = "paired-t") -> SignificanceResult:
    """Two-sided paired test of ``a`` against ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) != len(b):
        raise ValueError("paired samples must have equal length")
    if len(a) < 2:
        raise ValueError("need at least two pairs")
    diff = a - b
    if np.all(diff == diff[0]) or np.std(diff) < 1e-15 * max(1.0, float(np.abs(diff).max())):
        return SignificanceResult(1.0, kind, degenerate=True)
    if kind == "paired-t":
        p = stats.ttest_rel(a, b).pvalue
    elif kind == "wilcoxon":
        p = stats.wilcoxon(a, b).pvalue
    else:
        raise ValueError(f"unknown significance test {kind!r}")
    return SignificanceResult(float(p), kind)


def stars(p: float) -> str:
    for level, mark in STAR_LEVELS:
        if p < level:
            return mark
    return ""


def t_interval(values: Sequence[float], confidence: float) -> tuple[float, float]:
    """Mean and symmetric t half-width."""
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    if len(v) < 2:
        return mean, float("nan")
    q = stats.t.ppf((1 + confidence) / 2, len(v) - 1)
    return mean, float(q * v.std(ddof=1) / math.sqrt(len(v)))


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------


def load_dataset(spec: dict):
    kind = spec.get("kind", "synthetic")
    if kind == "synthetic":
        return make_synthetic_dataset(
            spec.get("n", 12000), seed=spec.get("seed", 0), n_features=spec.get("n_features", 5)
        )
    if kind == "csv":
        schema = spec["schema"]
        schema = DatasetSchema.from_dict(schema) if isinstance(schema, dict) else DatasetSchema.from_json(schema)
        return ingest_csv(spec["path"], schema)
    raise ValueError(f"unknown dataset kind {kind!r}")


def scenario_for(config: ExperimentConfig, prevalence: float, bias_kind: str, seed: int,
                 feature_names: Sequence[str]) -> ScenarioSpec:
    extra = dict(config.scenario)
    z = extra.get("interaction_feature", 0)
    if isinstance(z, str):
        extra["interaction_feature"] = list(feature_names).index(z)
    return ScenarioSpec(bias_kind=bias_kind, n_humans=config.n_humans, prevalence=prevalence, seed=seed, **extra)


def run_methods(world: SimulatedWorld, gold, methods: Sequence[str], config: ExperimentConfig, seed: int):
    """Estimates per method label; failures come back as error strings."""
    learner = learner_from_dict(config.learner)
    mdba_cfg = MdbaConfig(learner=learner, **config.mdba)
    out = {}
    for name in methods:
        base = method_base(name)
        try:
            if base == "MDBA":
                est = estimate_bias(world.decision_sets, gold, mdba_cfg)
            elif base == "MDBA-Naive":
                est = estimate_bias(world.decision_sets, gold, MdbaConfig(
                    learner=learner, naive_mode=True, **{k: v for k, v in config.mdba.items() if k != "naive_mode"}))
            elif base == "SR":
                est = sr_estimate(world.decision_sets)
            elif base == "GS":
                est = gs_estimate(world.decision_sets, gold, learner)
            else:
                est = cl_estimate(world.decision_sets, gold, learner, seed=seed)
            out[method_label(name)] = est
        except (ValueError, ArithmeticError, RuntimeError) as exc:
            out[method_label(name)] = f"{type(exc).__name__}: {exc}"
    return out


def _run_job(args):
    config, instances, feature_names, prevalence, bias_kind, iteration = args
    seed = config.base_seed + iteration
    records = []
    try:
        spec = scenario_for(config, prevalence, bias_kind, seed, feature_names)
        world = build_world(instances, spec, feature_names, config.reserve_per_group)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        msg = f"world: {type(exc).__name__}: {exc}"
        for gs in config.gs_sizes:
            for m in config.methods:
                records.append(_record(prevalence, bias_kind, gs, method_label(m), iteration, error=msg))
        return records
    truths = world.true_gaps
    sr_cache = None
    for gs in config.gs_sizes:
        try:
            gold = world.gold_pool(gs)
        except ValueError as exc:
            for m in config.methods:
                records.append(_record(prevalence, bias_kind, gs, method_label(m), iteration,
                                       error=f"gold pool: {exc}"))
            continue
        methods = list(config.methods)
        results = {}
        # SR ignores the gold pool; compute once per world
        if sr_cache is not None:
            for m in methods:
                if method_base(m) == "SR":
                    results[method_label(m)] = sr_cache[method_label(m)]
        todo = [m for m in methods if method_label(m) not in results]
        results.update(run_methods(world, gold, todo, config, seed))
        sr_cache = {method_label(m): results[method_label(m)] for m in methods if method_base(m) == "SR"}
        for m in methods:
            label = method_label(m)
            res = results[label]
            if isinstance(res, str):
                records.append(_record(prevalence, bias_kind, gs, label, iteration, error=res))
                continue
            ok = [e for e in res if e.ok]
            failed = {e.human_id: e.error for e in res if not e.ok}
            est = [e.gap for e in ok]
            tru = [truths[e.human_id] for e in ok]
            rec = _record(prevalence, bias_kind, gs, label, iteration,
                          humans=[e.human_id for e in ok], estimates=est, truths=tru,
                          failed=failed)
            if ok:
                rec["mae"] = mae(est, tru)
            else:
                rec["error"] = "all humans failed"
            records.append(rec)
    return records


def _record(prevalence, bias_kind, gs, method, iteration, **kw):
    rec = {
        "prevalence": prevalence,
        "bias_kind": bias_kind,
        "gs_size": gs,
        "method": method,
        "iteration": iteration,
        "mae": None,
        "error": None,
        "humans": [],
        "estimates": [],
        "truths": [],
        "failed": {},
    }
    rec.update(kw)
    return rec


@dataclass
class ExperimentReport:
    config: dict
    cells: list[dict]
    comparisons: list[dict]
    records: list[dict]
    metadata: dict = field(default_factory=dict)

    @property
    def has_failures(self) -> bool:
        return any(r["error"] or r["failed"] for r in self.records)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentReport:
        return cls(**d)


def _cell_key(r):
    return (r["prevalence"], r["bias_kind"], r["gs_size"], r["method"])


def aggregate(records: list[dict], config: ExperimentConfig) -> tuple[list[dict], list[dict]]:
    labels = [method_label(m) for m in config.methods]
    records = sorted(records, key=lambda r: (_cell_key(r), r["iteration"]))
    by_cell: dict = {}
    for r in records:
        by_cell.setdefault(_cell_key(r), []).append(r)
    cells = []
    for key in sorted(by_cell, key=lambda k: (k[0], k[1], k[2], labels.index(k[3]))):
        rs = by_cell[key]
        values = [r["mae"] for r in rs]
        good = [v for v in values if v is not None]
        cell = {
            "dataset": config.dataset_name,
            "prevalence": key[0],
            "bias_kind": key[1],
            "gs_size": key[2],
            "method": key[3],
            "mean_mae": None,
            "ci_half_width": None,
            "ci_low": None,
            "ci_high": None,
            "n_ok": len(good),
            "iteration_mae": values,
            "errors": sorted({r["error"] for r in rs if r["error"]}),
        }
        if good:
            mean, half = t_interval(good, config.confidence)
            cell["mean_mae"] = mean
            if not math.isnan(half):
                cell.update(ci_half_width=half, ci_low=mean - half, ci_high=mean + half)
        cells.append(cell)

    comparisons = []
    ref = "MDBA" if "MDBA" in labels else labels[0]
    for prev in sorted({k[0] for k in by_cell}):
        for kind in sorted({k[1] for k in by_cell}):
            for gs in sorted({k[2] for k in by_cell}):
                ref_rs = by_cell.get((prev, kind, gs, ref))
                if ref_rs is None:
                    continue
                for other in labels:
                    if other == ref:
                        continue
                    other_rs = by_cell.get((prev, kind, gs, other))
                    if other_rs is None:
                        continue
                    pairs = [(x["mae"], y["mae"]) for x, y in zip(ref_rs, other_rs)
                             if x["mae"] is not None and y["mae"] is not None]
                    comp = {
                        "dataset": config.dataset_name, "prevalence": prev, "bias_kind": kind,
                        "gs_size": gs, "method": ref, "versus": other, "n_pairs": len(pairs),
                        "improvement_pct": None, "p_value": None, "test": config.significance,
                        "degenerate": None, "stars": "",
                    }
                    if len(pairs) >= 2:
                        a, b = np.array(pairs).T
                        mean_ref, mean_other = float(a.mean()), float(b.mean())
                        if mean_other > 0:
                            comp["improvement_pct"] = (mean_other - mean_ref) / mean_other * 100
                        sig = significance_test(a, b, config.significance)
                        comp["p_value"] = sig.p_value
                        comp["degenerate"] = sig.degenerate
                        if mean_ref < mean_other:
                            comp["stars"] = stars(sig.p_value)
                    comparisons.append(comp)
    return cells, comparisons


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    instances, feature_names = load_dataset(config.dataset)
    jobs = [
        (config, instances, feature_names, prev, kind, it)
        for prev in config.prevalences
        for kind in config.bias_kinds
        for it in range(config.iterations)
    ]
    records: list[dict] = []
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for recs in pool.map(_run_job, jobs):
                records.extend(recs)
    else:
        for job in jobs:
            records.extend(_run_job(job))
            logger.info("finished prevalence=%s kind=%s iteration=%s", *job[3:])
    records.sort(key=lambda r: (r["prevalence"], r["bias_kind"], r["gs_size"], r["method"], r["iteration"]))
    cells, comparisons = aggregate(records, config)
    metadata = {
        "confidence_level": config.confidence,
        "confidence_note": "level is configurable; the source reports both 90% and 95% bounds",
        "significance_test": config.significance,
        "star_levels": {mark: level for level, mark in STAR_LEVELS},
        "improvement_definition": "(MAE_other - MAE_ref) / MAE_other * 100",
    }
    return ExperimentReport(config.to_dict(), cells, comparisons, records, metadata)


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(report: ExperimentReport, out_dir: str | Path, formats: Sequence[str] = ("json", "csv")) -> list[Path]:
    """Write report.json, cells.csv and one plot-data CSV per (prevalence, bias kind) panel."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        p = out / "report.json"
        p.write_text(json.dumps(_clean(report.to_dict()), indent=2, sort_keys=True) + "\n")
        written.append(p)
    if "csv" not in formats:
        return written

    n_iter = max((len(c["iteration_mae"]) for c in report.cells), default=0)
    p = out / "cells.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "prevalence", "bias_kind", "gs_size", "method", "mean_mae",
                    "ci_low", "ci_high", *[f"iter_{i}" for i in range(n_iter)]])
        for c in report.cells:
            vals = list(c["iteration_mae"]) + [None] * (n_iter - len(c["iteration_mae"]))
            w.writerow([_fmt(x) for x in (c["dataset"], c["prevalence"], c["bias_kind"], c["gs_size"],
                                          c["method"], c["mean_mae"], c["ci_low"], c["ci_high"], *vals)])
    written.append(p)

    panels: dict = {}
    for c in report.cells:
        panels.setdefault((c["dataset"], c["prevalence"], c["bias_kind"]), []).append(c)
    for (ds, prev, kind), cs in sorted(panels.items()):
        methods = list(dict.fromkeys(c["method"] for c in cs))
        sizes = sorted({c["gs_size"] for c in cs})
        lookup = {(c["gs_size"], c["method"]): c for c in cs}
        p = out / f"plot_{ds}_p{prev}_{kind}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gs_size", *[f"{m}_{s}" for m in methods for s in ("mean", "low", "high")]])
            for gs in sizes:
                row = [gs]
                for m in methods:
                    c = lookup.get((gs, m), {})
                    row += [_fmt(c.get("mean_mae")), _fmt(c.get("ci_low")), _fmt(c.get("ci_high"))]
                w.writerow(row)
        written.append(p)
    return written


def load_report(path: str | Path) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(Path(path).read_text()))
