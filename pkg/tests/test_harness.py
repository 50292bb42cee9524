import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from humanbias.harness import (
    ExperimentConfig,
    ExperimentReport,
    aggregate,
    emit_report,
    load_report,
    run_experiment,
    significance_test,
    stars,
    t_interval,
)
from humanbias.metrics import mae

TINY = dict(
    dataset={"kind": "synthetic", "n": 3000, "seed": 1},
    prevalences=[0.2],
    bias_kinds=["correct"],
    gs_sizes=[100],
    iterations=2,
    n_humans=3,
    reserve_per_group=150,
    learner={"family": "boosted", "n_trees": 20},
)


@pytest.fixture(scope="module")
def tiny_report():
    return run_experiment(ExperimentConfig(**TINY, methods=["MDBA", "SR"]))


def test_minimal_grid(tiny_report):
    assert len(tiny_report.cells) == 2
    assert all(len(c["iteration_mae"]) == 2 for c in tiny_report.cells)
    assert len(tiny_report.comparisons) == 1
    comp = tiny_report.comparisons[0]
    assert (comp["method"], comp["versus"]) == ("MDBA", "SR")
    assert not tiny_report.has_failures


def test_cells_match_raw_records(tiny_report):
    for cell in tiny_report.cells:
        recs = [r for r in tiny_report.records if r["method"] == cell["method"]]
        recomputed = [mae(r["estimates"], r["truths"]) for r in sorted(recs, key=lambda r: r["iteration"])]
        assert cell["iteration_mae"] == recomputed
        assert cell["mean_mae"] == pytest.approx(np.mean(recomputed), abs=1e-15)
        assert cell["ci_low"] <= cell["mean_mae"] <= cell["ci_high"]


def test_self_comparison():
    report = run_experiment(ExperimentConfig(**TINY, methods=["MDBA", "MDBA2=MDBA"]))
    (comp,) = report.comparisons
    assert comp["versus"] == "MDBA2"
    assert comp["improvement_pct"] == pytest.approx(0.0, abs=1e-12)
    assert comp["stars"] == "" and comp["p_value"] == 1.0 and comp["degenerate"]


def test_partial_failure_recorded():
    cfg = ExperimentConfig(**{**TINY, "gs_sizes": [100, 500]}, methods=["MDBA", "SR"])
    report = run_experiment(cfg)
    assert report.has_failures
    bad = [c for c in report.cells if c["gs_size"] == 500]
    assert bad and all(c["mean_mae"] is None and c["errors"] for c in bad)
    good = [c for c in report.cells if c["gs_size"] == 100]
    assert all(c["mean_mae"] is not None for c in good)


def test_significance_examples():
    a = np.linspace(0.1, 0.3, 20)
    assert significance_test(a, a).p_value == 1.0
    assert significance_test(a, a).degenerate
    noise = np.random.default_rng(0).normal(scale=1e-3, size=20)
    assert significance_test(a + 0.5 + noise, a).p_value < 0.01
    assert significance_test([0.1, 0.5], [0.2, 0.4]).p_value > 0.1
    assert significance_test(a + 0.5 + noise, a, "wilcoxon").p_value < 0.01
    with pytest.raises(ValueError):
        significance_test([1.0], [2.0])


def test_paired_t_closed_form():
    rng = np.random.default_rng(1)
    a, b = rng.random(12), rng.random(12)
    d = a - b
    t = d.mean() / (d.std(ddof=1) / np.sqrt(len(d)))
    expected = 2 * stats.t.sf(abs(t), len(d) - 1)
    assert significance_test(a, b).p_value == pytest.approx(expected, rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=30))
def test_significance_symmetric(pairs):
    a = [p[0] for p in pairs]
    b = [p[1] for p in pairs]
    for kind in ("paired-t", "wilcoxon"):
        assert significance_test(a, b, kind).p_value == pytest.approx(significance_test(b, a, kind).p_value)


def test_stars():
    assert [stars(p) for p in (0.005, 0.01, 0.03, 0.07, 0.2)] == ["***", "**", "**", "*", ""]


def test_interval_shrinks_with_iterations():
    rng = np.random.default_rng(2)
    values = rng.normal(0.1, 0.02, 20)
    _, h5 = t_interval(values[:5], 0.95)
    _, h20 = t_interval(values, 0.95)
    assert h20 < h5
    _, h90 = t_interval(values, 0.90)
    assert h90 < h20


def test_interval_shrinks_on_scenario_family():
    cfg = dict(TINY, learner={"family": "logistic"})
    short = run_experiment(ExperimentConfig(**{**cfg, "iterations": 5}, methods=["GS"]))
    long = run_experiment(ExperimentConfig(**{**cfg, "iterations": 20}, methods=["GS"]))
    assert long.cells[0]["ci_half_width"] < short.cells[0]["ci_half_width"]


def fake_records(prevs, kinds, sizes, methods, iterations):
    out = []
    for p in prevs:
        for k in kinds:
            for g in sizes:
                for m in methods:
                    for it in range(iterations):
                        v = 0.1 + 0.01 * it + (0.05 + 0.001 * (it % 2) if m != "MDBA" else 0.0)
                        out.append(dict(prevalence=p, bias_kind=k, gs_size=g, method=m, iteration=it,
                                        mae=v, error=None, humans=[], estimates=[], truths=[], failed={}))
    return out


def test_default_grid_cell_count():
    cfg = ExperimentConfig()
    recs = fake_records(cfg.prevalences, cfg.bias_kinds, cfg.gs_sizes, cfg.methods, 3)
    cells, comps = aggregate(recs, cfg)
    assert len(cells) == 64
    assert len(comps) == 16 * 3
    assert all(c["stars"] == "***" for c in comps)


def test_emit_one_cell(tmp_path):
    cfg = ExperimentConfig(prevalences=[0.2], bias_kinds=["correct"], gs_sizes=[100], methods=["MDBA"])
    cells, comps = aggregate(fake_records([0.2], ["correct"], [100], ["MDBA"], 4), cfg)
    report = ExperimentReport(cfg.to_dict(), cells, comps, [], {})
    files = emit_report(report, tmp_path)
    assert len(files) == 3
    with open(tmp_path / "cells.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 2
    assert rows[0][:8] == ["dataset", "prevalence", "bias_kind", "gs_size", "method", "mean_mae", "ci_low", "ci_high"]


def test_emit_reemit_identical(tmp_path, tiny_report):
    first = emit_report(tiny_report, tmp_path / "a")
    again = emit_report(load_report(tmp_path / "a" / "report.json"), tmp_path / "b")
    for p, q in zip(first, again):
        assert p.name == q.name and p.read_bytes() == q.read_bytes()
    data = json.loads((tmp_path / "a" / "report.json").read_text())
    assert data["metadata"]["significance_test"] == "paired-t"


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(confidence=1.0)
    with pytest.raises(ValueError):
        ExperimentConfig(methods=["MDBA", "XYZ"])
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"iterationz": 3})
    cfg = ExperimentConfig(iterations=3)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_parallel_schedule_identical():
    serial = run_experiment(ExperimentConfig(**TINY, methods=["MDBA", "SR"]))
    parallel = run_experiment(ExperimentConfig(**TINY, methods=["MDBA", "SR"], workers=2))
    assert serial.cells == parallel.cells
    assert serial.records == parallel.records
