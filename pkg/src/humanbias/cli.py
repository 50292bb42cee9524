"""Command line entry point: ``humanbias {simulate,assess,benchmark,report}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .baselines import cl_estimate, gs_estimate, sr_estimate
from .datamodel import DataError, DatasetSchema, GoldStandardSet, ingest_csv, ingest_decision_sets, schema_categories
from .harness import (
    ExperimentConfig,
    emit_report,
    load_dataset,
    load_report,
    method_base,
    method_label,
    run_experiment,
    scenario_for,
)
from .learners import learner_from_dict
from .mdba import MdbaConfig, estimate_bias
from .metrics import mae
from .simulate import build_world, load_world, save_world

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2

log = logging.getLogger("humanbias")


def _load_config(args) -> ExperimentConfig:
    d = json.loads(Path(args.config).read_text()) if args.config else {}
    if getattr(args, "seed", None) is not None:
        d["base_seed"] = args.seed
    if getattr(args, "methods", None):
        d["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    return ExperimentConfig.from_dict(d)


def cmd_simulate(args) -> int:
    config = _load_config(args)
    instances, names = load_dataset(config.dataset)
    prevalence = args.prevalence if args.prevalence is not None else config.prevalences[0]
    kind = args.bias_kind or config.bias_kinds[0]
    spec = scenario_for(config, prevalence, kind, config.base_seed, names)
    world = build_world(instances, spec, names, config.reserve_per_group)
    out = save_world(world, args.out_dir)
    print(f"wrote world with {len(world.decision_sets)} humans to {out}")
    return EXIT_OK


def _estimates(decision_sets, gold, methods, config: ExperimentConfig):
    learner = learner_from_dict(config.learner)
    results = {}
    for name in methods:
        base = method_base(name)
        if base == "MDBA":
            est = estimate_bias(decision_sets, gold, MdbaConfig(learner=learner, **config.mdba))
        elif base == "MDBA-Naive":
            est = estimate_bias(decision_sets, gold, MdbaConfig(learner=learner, **{**config.mdba, "naive_mode": True}))
        elif base == "SR":
            est = sr_estimate(decision_sets)
        elif base == "GS":
            est = gs_estimate(decision_sets, gold, learner)
        elif base == "CL":
            est = cl_estimate(decision_sets, gold, learner, seed=config.base_seed)
        else:
            raise ValueError(f"unknown method {name!r}")
        results[method_label(name)] = est
    return results


def cmd_assess(args) -> int:
    config = _load_config(args)
    methods = config.methods if args.methods else ["MDBA"]
    truths = {}
    if args.world:
        world = load_world(args.world)
        decision_sets = list(world.decision_sets)
        gold = world.gold_pool(args.gs_size) if args.gs_size else world.reserve
        truths = world.true_gaps
    else:
        if not (args.decisions and args.gold and args.schema):
            raise DataError("assess needs --world, or --decisions with --gold and --schema")
        schema = DatasetSchema.from_json(args.schema)
        cats = schema_categories([args.decisions, args.gold], schema)
        decision_sets, _ = ingest_decision_sets(args.decisions, schema, cats)
        gold_schema = dataclasses.replace(schema, dataset_id=f"{schema.dataset_id}:gold")
        gold_instances, _ = ingest_csv(args.gold, gold_schema, cats)
        gold = GoldStandardSet(tuple(gold_instances))

    results = _estimates(decision_sets, gold, methods, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    partial = False
    records = []
    for method, ests in results.items():
        for e in ests:
            rec = e.to_dict()
            rec["true_gap"] = truths.get(e.human_id)
            records.append(rec)
            partial |= not e.ok
    summary = {}
    if truths:
        for method, ests in results.items():
            ok = [e for e in ests if e.ok]
            if ok:
                summary[method] = mae([e.gap for e in ok], [truths[e.human_id] for e in ok])
    if args.format in ("json", None):
        payload = {"estimates": records, "mae": summary}
        (out / "estimates.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if args.format in ("csv", None):
        with open(out / "estimates.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "human_id", "gap", "uncertainty", "c_used", "true_gap", "flags", "error"])
            for r in records:
                w.writerow([r["method"], r["human_id"], r["gap"], r["uncertainty"], r["c_used"],
                            r["true_gap"], ";".join(r["flags"]), r["error"] or ""])
    for method, value in summary.items():
        print(f"{method}: MAE {value:.4f}")
    return EXIT_PARTIAL if partial else EXIT_OK


def _formats(fmt: str):
    return ("json", "csv") if fmt is None else (fmt,)


def cmd_benchmark(args) -> int:
    config = _load_config(args)
    report = run_experiment(config)
    for p in emit_report(report, args.out_dir, _formats(args.format)):
        print(p)
    return EXIT_PARTIAL if report.has_failures else EXIT_OK


def cmd_report(args) -> int:
    report = load_report(args.input)
    for p in emit_report(report, args.out_dir, _formats(args.format)):
        print(p)
    return EXIT_PARTIAL if report.has_failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="humanbias", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, methods=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, help="base seed (overrides config)")
        p.add_argument("--out-dir", required=True)
        if methods:
            p.add_argument("--methods", help="comma-separated, e.g. MDBA,SR,GS,CL")
        p.add_argument("--format", choices=("json", "csv"), default=None,
                       help="output format (default: both)")

    p = sub.add_parser("simulate", help="build a simulated world and save it")
    common(p, methods=False)
    p.add_argument("--prevalence", type=float)
    p.add_argument("--bias-kind", choices=("correct", "incorrect"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("assess", help="run estimators on a saved world or user data")
    common(p)
    p.add_argument("--world", help="directory written by 'simulate'")
    p.add_argument("--gs-size", type=int, help="gold pool size per group drawn from the world reserve")
    p.add_argument("--decisions", help="CSV of human decisions")
    p.add_argument("--gold", help="CSV of gold-labelled instances")
    p.add_argument("--schema", help="DatasetSchema JSON for --decisions/--gold")
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("benchmark", help="run the full experiment grid")
    common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="re-render a saved report.json")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=("json", "csv"), default=None,
                       help="output format (default: both)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
