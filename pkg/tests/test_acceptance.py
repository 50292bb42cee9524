"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one verdict line; the terminal summary repeats them.
"""

import time

import numpy as np
import pytest
from scipy.stats import kendalltau

from humanbias.baselines import cl_confident_joint
from humanbias.harness import ExperimentConfig, emit_report, run_experiment
from humanbias.learners import LogisticConfig, logistic_objective
from humanbias.mdba import MdbaConfig, estimate_bias
from humanbias.metrics import (
    Cells,
    UndefinedRateError,
    confusion,
    mae,
    rpr_ratio,
    selection_rate_gap,
    tpr_gap,
)
from humanbias.simulate import ScenarioSpec, build_linear_world, build_world, make_synthetic_dataset

LOGISTIC = LogisticConfig()
MDBA = MdbaConfig(learner=LOGISTIC)
NAIVE = MdbaConfig(learner=LOGISTIC, naive_mode=True, rescale_by_c=False)
RANK_SEEDS = range(10)

DESK_GRID = dict(
    dataset={"kind": "synthetic", "n": 12000, "seed": 0},
    prevalences=[0.2],
    bias_kinds=["correct"],
    gs_sizes=[200],
    iterations=20,
    n_humans=10,
    methods=["MDBA", "SR", "GS", "CL"],
    base_seed=0,
)


def _gaps(world, config):
    est = estimate_bias(world.decision_sets, world.reserve, config)
    return np.array([e.gap for e in est]), np.array([world.true_gaps[e.human_id] for e in est])


@pytest.fixture(scope="module")
def linear_runs():
    """MDBA and MDBA-Naive on the matching-family linear world, 10 seeds."""
    runs = []
    for seed in RANK_SEEDS:
        w = build_linear_world(n_per_human=2000, gold_size=4000, seed=seed)
        est, truth = _gaps(w, MDBA)
        naive, _ = _gaps(w, NAIVE)
        runs.append((est, truth, naive))
    return runs


@pytest.fixture(scope="module")
def desk_report():
    t0 = time.perf_counter()
    report = run_experiment(ExperimentConfig(**DESK_GRID))
    return report, time.perf_counter() - t0


def test_criterion_01_gap_recovery(verdict):
    t0 = time.perf_counter()
    w = build_linear_world(n_per_human=2000, gold_size=4000, seed=0)
    est, truth = _gaps(w, MDBA)
    elapsed = time.perf_counter() - t0
    worst = float(np.max(np.abs(est - truth)))
    ok = len(est) == 5 and worst <= 0.02 and elapsed < 60
    assert verdict(1, "gap recovery with matching model family", ok,
                   f"max |est-true| = {worst:.4f} (<= 0.02), K={len(est)}, runtime {elapsed:.1f}s (< 60s)")


def _non_concordant(x, y):
    n = len(x)
    return sum((x[i] - x[j]) * (y[i] - y[j]) <= 0 for i in range(n) for j in range(i + 1, n))


def test_criterion_02_ranking(verdict, linear_runs):
    # tau == 1 exactly iff no pair is discordant or tied; scipy's float can land at 1 - 1ulp
    taus = [kendalltau(est, truth).statistic for est, truth, _ in linear_runs]
    bad = sum(_non_concordant(est, truth) for est, truth, _ in linear_runs)
    ok = bad == 0
    assert verdict(2, "ranking preserved", ok,
                   f"Kendall tau over {len(taus)} seeds: min {min(taus):.6f}, {bad} discordant or tied pairs (need 0)")


def test_criterion_03_desk_reproduction(verdict, desk_report):
    report, elapsed = desk_report
    means = {c["method"]: c["mean_mae"] for c in report.cells}
    comps = {c["versus"]: c for c in report.comparisons}
    checks = []
    for other in ("SR", "CL"):
        c = comps[other]
        checks.append(means["MDBA"] < means[other] and c["p_value"] < 0.05)
    ok = all(checks) and elapsed < 600
    detail = (
        f"mean MAE MDBA {means['MDBA']:.4f}, SR {means['SR']:.4f} (p={comps['SR']['p_value']:.2g}), "
        f"CL {means['CL']:.4f} (p={comps['CL']['p_value']:.2g}), GS {means['GS']:.4f}; "
        f"runtime {elapsed:.0f}s (< 600s)"
    )
    assert verdict(3, "MDBA beats SR and CL at desk scale", ok, detail)


def test_criterion_04_simulation_fidelity(verdict):
    instances, names = make_synthetic_dataset(12000, seed=0)
    bad, n_humans, flagged = [], 0, 0
    for seed in range(20):
        spec = ScenarioSpec(bias_kind="correct", seed=seed)
        w = build_world(instances, spec, names)
        for target, ds in zip(spec.targets, w.decision_sets):
            info = w.info[ds.human_id]
            n_humans += 1
            ok_a = abs(info.tpr_a - target) <= 0.01 + 1e-9 or "closest_attainable_a" in info.flags
            ok_n = abs(info.tpr_not_a - 0.95) <= 0.01 + 1e-9 or "closest_attainable_not_a" in info.flags
            flagged += bool(info.flags)
            if not (ok_a and ok_n):
                bad.append((seed, ds.human_id, info.tpr_a, info.tpr_not_a))
    assert verdict(4, "simulation fidelity", not bad,
                   f"{n_humans} humans over 20 worlds, {len(bad)} out of tolerance, {flagged} flagged closest-attainable")


def _brute(pred, ref, grp):
    cells = {0: [0, 0, 0, 0], 1: [0, 0, 0, 0]}  # tp fp tn fn
    for p, r, g in zip(pred, ref, grp):
        idx = 0 if p and r else 1 if p else 2 if not r else 3
        cells[g][idx] += 1
    return cells


def test_criterion_05_metric_oracle(verdict):
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 201))
        pred, ref, grp = (rng.integers(0, 2, n) for _ in range(3))
        b = _brute(pred.tolist(), ref.tolist(), grp.tolist())
        conf = confusion(pred, ref, grp)
        for g, c in ((1, conf.a), (0, conf.not_a)):
            mismatches += [c.tp, c.fp, c.tn, c.fn] != b[g]
        tp_a, fp_a, _, fn_a = b[1]
        tp_n, _, _, fn_n = b[0]
        if tp_a + fn_a and tp_n + fn_n:
            mismatches += abs(tpr_gap(conf).value - (tp_a / (tp_a + fn_a) - tp_n / (tp_n + fn_n))) > 1e-12
            mismatches += abs(rpr_ratio(conf.a) - (tp_a + fp_a) / (tp_a + fn_a)) > 1e-12
        else:
            try:
                tpr_gap(conf)
                mismatches += 1
            except UndefinedRateError:
                pass
        n_a = sum(b[1])
        n_n = sum(b[0])
        if n_a and n_n:
            sel_a = sum(int(d) for d, g in zip(pred, grp) if g == 1) / n_a
            sel_n = sum(int(d) for d, g in zip(pred, grp) if g == 0) / n_n
            mismatches += abs(selection_rate_gap(pred, grp).value - (sel_a - sel_n)) > 1e-12
        est, tru = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
        mismatches += abs(mae(est, tru) - sum(abs(x - y) for x, y in zip(est, tru)) / n) > 1e-12
    assert verdict(5, "metric oracle equivalence", mismatches == 0,
                   f"{mismatches} mismatches over 1000 random instances (n <= 200)")


def test_criterion_06_rpr_identity(verdict):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10000):
        tp = int(rng.integers(1, 1000))
        fp, fn = (int(v) for v in rng.integers(0, 1000, 2))
        identity = (tp / (tp + fn)) / (tp / (tp + fp))
        worst = max(worst, abs(rpr_ratio(Cells(tp=tp, fp=fp, fn=fn)) - identity))
    assert verdict(6, "RPR identity", worst < 1e-12, f"max |(TP+FP)/(TP+FN) - TPR/PPV| = {worst:.2e} (< 1e-12)")


def test_criterion_07_gradient_check(verdict):
    rng = np.random.default_rng(11)
    worst = 0.0
    # 4th-order central stencil: a 2-point difference at h=1e-5 carries ~1e-11 absolute
    # error, which dominates relative error on near-zero components
    h = 1e-3
    for _ in range(100):
        n, d = int(rng.integers(5, 80)), int(rng.integers(1, 10))
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, n).astype(float)
        w, b, l2 = rng.normal(size=d), float(rng.normal()), float(rng.uniform(0, 0.5))
        _, gw, gb = logistic_objective(w, b, X, y, l2)
        analytic = np.append(gw, gb)
        theta = np.append(w, b)
        f = lambda t: logistic_objective(t[:d], t[d], X, y, l2)[0]
        numeric = np.array([(8 * (f(theta + e) - f(theta - e)) - (f(theta + 2 * e) - f(theta - 2 * e))) / (12 * h)
                            for e in np.eye(d + 1) * h])
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    assert verdict(7, "logistic gradient check", worst < 1e-6,
                   f"max relative error {worst:.2e} over 100 problems (< 1e-6)")


def test_criterion_08_confident_joint(verdict):
    rng = np.random.default_rng(3)
    p1 = np.concatenate([rng.uniform(0.7, 0.95, 50), rng.uniform(0.05, 0.3, 50)])
    labels = np.array([1] * 50 + [0] * 50)
    clean = cl_confident_joint(p1, labels)
    clean_off = int(clean.counts[0, 1] + clean.counts[1, 0])
    neg = np.nonzero(labels == 0)[0]
    planted = neg[np.argsort(p1[neg])[:5]]
    noisy = labels.copy()
    noisy[planted] = 1
    cj = cl_confident_joint(p1, noisy)
    found = set(np.nonzero(cj.off_diagonal)[0].tolist())
    ok = clean_off == 0 and int(cj.off_diagonal.sum()) == 5 and found == set(planted.tolist())
    assert verdict(8, "confident joint sanity", ok,
                   f"clean off-diagonal {clean_off} (need 0); planted 5 flips, recovered {len(found & set(planted.tolist()))}, "
                   f"off-diagonal total {int(cj.off_diagonal.sum())}")


def test_criterion_09_ablation(verdict, linear_runs):
    mdba_easy = np.mean([mae(est, truth) for est, truth, _ in linear_runs])
    naive_easy = np.mean([mae(naive, truth) for _, truth, naive in linear_runs])
    cfg = ExperimentConfig(**{**DESK_GRID, "bias_kinds": ["incorrect"], "methods": ["MDBA", "MDBA-Naive"]})
    report = run_experiment(cfg)
    means = {c["method"]: c["mean_mae"] for c in report.cells}
    easy_ok = abs(mdba_easy - naive_easy) < 0.01
    hard_ok = means["MDBA"] <= means["MDBA-Naive"]
    detail = (
        f"matching-family |MAE diff| = {abs(mdba_easy - naive_easy):.4f} (< 0.01); "
        f"incorrect ordering MDBA {means['MDBA']:.4f} vs Naive {means['MDBA-Naive']:.4f} (need <=)"
    )
    assert verdict(9, "ablation consistency", easy_ok and hard_ok, detail)


def test_criterion_10_determinism(verdict, desk_report, tmp_path):
    first, _ = desk_report
    second = run_experiment(ExperimentConfig(**DESK_GRID))
    a = emit_report(first, tmp_path / "first")
    b = emit_report(second, tmp_path / "second")
    same = [p.name for p, q in zip(a, b) if p.read_bytes() == q.read_bytes()]
    ok = len(a) == len(b) and len(same) == len(a)
    assert verdict(10, "determinism", ok, f"{len(same)}/{len(a)} report files byte-identical on re-run")
