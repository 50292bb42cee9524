"""Benchmark worlds: gold-label shaping and biased-decision simulators.

A world is built from a covariate table: gold labels are reshaped to a fixed
per-group prevalence, a stratified gold reserve is set aside, the remainder is
split across K humans and each human's decisions are simulated with a chosen
bias mechanism. True gaps are recorded from the retained gold labels.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .datamodel import (
    GROUP_A,
    GROUP_NOT_A,
    DecisionSet,
    GoldStandardSet,
    Instance,
    design_matrix,
    read_instances_csv,
    sample_gs_pool,
    stratified_partition,
    write_instances_csv,
)
from .learners import LogisticConfig, fit_logistic
from .metrics import true_gap

logger = logging.getLogger(__name__)

BAND_EPS = 1e-9
CORRECT = "correct"
INCORRECT = "incorrect"


class SimulationError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# scenario description
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    bias_kind: str = CORRECT
    n_humans: int = 10
    prevalence: float = 0.2
    # correct ordering: group-a TPR targets spread evenly over this range
    tpr_range: tuple[float, float] = (0.54, 0.90)
    sim_tol: float = 0.01
    advantaged_tpr: float = 0.95
    advantaged_tol: float = 0.01
    # incorrect ordering
    interaction_feature: int = 0
    tpr_low: float = 0.5
    tpr_high: float = 0.9
    step: float = 0.01
    decrement_cap: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.bias_kind not in (CORRECT, INCORRECT):
            raise ValueError(f"unknown bias kind {self.bias_kind!r}")
        if not 0 < self.prevalence <= 1:
            raise ValueError("prevalence must be in (0, 1]")
        if self.n_humans < 1:
            raise ValueError("n_humans must be positive")
        object.__setattr__(self, "tpr_range", tuple(self.tpr_range))

    @property
    def targets(self) -> list[float]:
        lo, hi = self.tpr_range
        return np.linspace(lo, hi, self.n_humans).tolist()

    @property
    def tpr_gap(self) -> float:
        if self.n_humans == 1:
            return 0.0
        return (self.tpr_high - self.tpr_low) / (self.n_humans - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tpr_range"] = list(self.tpr_range)
        return d


@dataclass(frozen=True)
class HumanSimInfo:
    tpr_a: float
    tpr_not_a: float
    target_a: float | None = None
    threshold: float | None = None
    coefficient: float | None = None
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class SimulatedWorld:
    decision_sets: tuple[DecisionSet, ...]
    reserve: GoldStandardSet
    true_gaps: dict[str, float]
    info: dict[str, HumanSimInfo]
    spec: ScenarioSpec
    feature_names: tuple[str, ...] = ()

    def gold_pool(self, per_group: int, seed: int | None = None) -> GoldStandardSet:
        """Gold pool drawn from the reserve; pools of growing size are nested."""
        seed = self.spec.seed if seed is None else seed
        return sample_gs_pool(self.reserve.instances, per_group, seed)

    def truth_vector(self) -> list[float]:
        return [self.true_gaps[ds.human_id] for ds in self.decision_sets]


# --------------------------------------------------------------------------
# covariates and gold labels
# --------------------------------------------------------------------------


def make_synthetic_dataset(n: int, seed: int = 0, n_features: int = 5, dataset_id: str = "synthetic"):
    """Census-like synthetic covariates with a noisy original label.

    Feature 0 is an ordinal, education-like score and the default interaction
    feature. Group ``a`` (half the rows) has a mild shift on two covariates.
    Returns ``(instances, feature_names)``.
    """
    rng = np.random.default_rng(seed)
    group = (rng.random(n) < 0.5).astype(int)
    X = rng.normal(size=(n, n_features))
    X[:, 0] = np.clip(np.round(9 + 2.5 * X[:, 0]), 1, 16)
    X[:, 1] -= 0.25 * group
    if n_features > 2:
        X[:, 2] += 0.15 * group
    beta = np.linspace(1.0, 0.2, n_features)
    logits = beta[0] * (X[:, 0] - 9) / 2.5 + X[:, 1:] @ beta[1:] - 1.0
    y = (rng.random(n) < 1 / (1 + np.exp(-logits))).astype(int)
    names = ["education"] + [f"x{j}" for j in range(1, n_features)]
    instances = [
        Instance(tuple(float(v) for v in X[i]), int(group[i]), int(y[i]), row=i, dataset_id=dataset_id)
        for i in range(n)
    ]
    return instances, names


def shape_prevalence(
    instances: Sequence[Instance], p: float, learner: LogisticConfig | None = None, seed: int = 0
) -> list[Instance]:
    """Relabel so each group has exactly ``ceil(p * n_g)`` positives.

    A logistic model is fit on the original labels; within each group the
    highest-scoring instances become positive, ties kept in input order.
    ``seed`` is accepted for interface symmetry; the procedure is deterministic.
    """
    if any(inst.gold_label is None for inst in instances):
        raise SimulationError("prevalence shaping needs original labels on every instance")
    X = design_matrix(instances)
    y = np.array([inst.gold_label for inst in instances])
    scores = fit_logistic(X, y, learner or LogisticConfig()).predict_proba(X)
    groups = X[:, -1].astype(int)
    new = np.zeros(len(instances), dtype=int)
    for g in (GROUP_A, GROUP_NOT_A):
        idx = np.nonzero(groups == g)[0]
        if len(idx) == 0:
            raise SimulationError(f"group {g} is empty")
        k = math.ceil(p * len(idx) - 1e-9)
        if k < 1:
            raise SimulationError(f"prevalence {p} gives no positives in group {g} of size {len(idx)}")
        order = idx[np.argsort(-scores[idx], kind="stable")]
        new[order[:k]] = 1
    return [replace(inst, gold_label=int(v)) for inst, v in zip(instances, new)]


# --------------------------------------------------------------------------
# decision simulators
# --------------------------------------------------------------------------


def _tpr(selected: np.ndarray, positive: np.ndarray) -> float:
    return float(np.sum(selected & positive) / np.sum(positive))


def correct_ordering_threshold(scores: np.ndarray, positive: np.ndarray, target: float, tol: float = 0.01):
    """Threshold on ``scores`` whose TPR is closest to ``target``.

    Returns ``(threshold, achieved_tpr, within_tol)``. Among thresholds with the
    same closest TPR the highest is used.
    """
    n_pos = int(positive.sum())
    if n_pos == 0:
        raise SimulationError("no positive gold labels in group a")
    cand = np.unique(scores)
    pos_sorted = np.sort(scores[positive])
    tprs = (n_pos - np.searchsorted(pos_sorted, cand, side="left")) / n_pos
    dist = np.abs(tprs - target)
    best = np.nonzero(dist <= dist.min() + 1e-12)[0][-1]
    return float(cand[best]), float(tprs[best]), bool(dist[best] <= tol + BAND_EPS)


def simulate_correct_ordering(
    parts: Sequence[Sequence[Instance]],
    targets: Sequence[float],
    tol: float = 0.01,
    learner: LogisticConfig | None = None,
):
    """Group-a decisions that keep each human's within-group ranking intact.

    Per human a logistic model of the gold label is fit on that human's data
    and group-a decisions are its scores thresholded at the cut whose TPR is
    closest to the target. Returns one ``(decisions_a, info)`` per human where
    ``decisions_a`` aligns with the group-a members in part order.
    """
    out = []
    for part, target in zip(parts, targets):
        X = design_matrix(part)
        y = np.array([inst.gold_label for inst in part])
        model = fit_logistic(X, y, learner or LogisticConfig())
        a = X[:, -1] == GROUP_A
        scores = model.predict_proba(X[a])
        thr, achieved, ok = correct_ordering_threshold(scores, y[a] == 1, target, tol)
        decisions = (scores >= thr).astype(int)
        flags = () if ok else ("closest_attainable_a",)
        out.append((decisions, dict(target_a=float(target), threshold=thr, tpr_a=achieved, flags=flags)))
    return out


def simulate_advantaged_noise(gold_labels, target: float = 0.95, tol: float = 0.01, rng=None):
    """Decisions equal to the gold labels except for random positive-to-negative flips.

    Returns ``(decisions, achieved_tpr, within_tol)``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    y = np.asarray(gold_labels, dtype=int)
    pos = np.nonzero(y == 1)[0]
    if len(pos) == 0:
        raise SimulationError("no positive gold labels in group ~a")
    n = len(pos)
    flips = np.arange(n + 1)
    dist = np.abs((n - flips) / n - target)
    n_flip = int(np.argmin(dist))
    achieved = (n - n_flip) / n
    decisions = y.copy()
    decisions[rng.choice(pos, size=n_flip, replace=False)] = 0
    return decisions, float(achieved), bool(abs(achieved - target) <= tol + BAND_EPS)


def _top_fraction(scores: np.ndarray, n_sel: int) -> np.ndarray:
    sel = np.zeros(len(scores), dtype=bool)
    sel[np.argsort(-scores, kind="stable")[:n_sel]] = True
    return sel


def simulate_incorrect_ordering(
    parts: Sequence[Sequence[Instance]],
    gold: Sequence[Instance],
    spec: ScenarioSpec,
    learner: LogisticConfig | None = None,
):
    """Group-a decisions from a pooled model whose interaction term is misused.

    A logistic model is fit on the gold pool plus every human's data with the
    features augmented by ``Z * A``. For each human the interaction
    coefficient is decreased by ``spec.step`` per iteration and the top
    ``prevalence`` share of group-a scores is selected. Human 1 stops inside
    ``tpr_low +- tpr_gap``; human k stops once its TPR reaches the previous
    human's TPR plus ``tpr_gap``. Within the contiguous run of qualifying
    steps the one closest to the bar is kept.
    """
    z = spec.interaction_feature

    def augment(instances):
        X = design_matrix(instances)
        return np.column_stack([X, X[:, z] * X[:, -1]])

    pooled = list(gold) + [inst for part in parts for inst in part]
    T = augment(pooled)
    y_all = np.array([inst.gold_label for inst in pooled])
    model = fit_logistic(T, y_all, learner or LogisticConfig())
    inter = T.shape[1] - 1
    coef0 = model.weights[inter]
    gap = spec.tpr_gap

    out = []
    prev_tpr = None
    for k, part in enumerate(parts):
        Xk = augment(part)
        a = Xk[:, -2] == GROUP_A
        Xa = Xk[a]
        positive = np.array([inst.gold_label for inst in part])[a] == 1
        if not positive.any():
            raise SimulationError(f"human {k + 1}: no positive gold labels in group a")
        base = Xa[:, :inter] @ model.weights[:inter] + model.bias
        zval = Xa[:, inter]
        n_sel = math.ceil(spec.prevalence * len(Xa) - 1e-9)

        if spec.step > 0:
            limit_order = np.lexsort((-base, zval))
        else:
            limit_order = np.lexsort((-base, -zval))
        limit = np.zeros(len(Xa), dtype=bool)
        limit[limit_order[:n_sel]] = True

        if k == 0:
            bar = spec.tpr_low
            qualifies = lambda t: abs(t - bar) <= gap + BAND_EPS
            closeness = lambda t: abs(t - bar)
        else:
            bar = prev_tpr + gap
            qualifies = lambda t: t >= bar - BAND_EPS
            closeness = lambda t: t - bar

        best = None  # (closeness, step index, tpr, selection)
        in_run = False
        s = 0
        while s <= spec.decrement_cap:
            coef = coef0 - s * spec.step
            sel = _top_fraction(base + coef * zval, n_sel)
            t = _tpr(sel, positive)
            if qualifies(t):
                in_run = True
                if best is None or closeness(t) < best[0] - 1e-12:
                    best = (closeness(t), s, t, sel)
            elif in_run:
                break
            if spec.step == 0 or np.array_equal(sel, limit):
                break
            s += 1
        if best is None:
            raise SimulationError(
                f"human {k + 1}: no interaction coefficient reached the TPR target "
                f"within {spec.decrement_cap} decrements"
            )
        _, s_best, t_best, sel = best
        prev_tpr = t_best
        out.append((
            sel.astype(int),
            dict(target_a=float(bar), coefficient=float(coef0 - s_best * spec.step), tpr_a=t_best, flags=()),
        ))
    return out


# --------------------------------------------------------------------------
# world assembly
# --------------------------------------------------------------------------


def _assemble(parts, group_a_decisions, spec: ScenarioSpec, reserve, feature_names):
    decision_sets, gaps, info = [], {}, {}
    for k, (part, (dec_a, meta)) in enumerate(zip(parts, group_a_decisions)):
        hid = f"h{k + 1:02d}"
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 7919, k]))
        groups = np.array([inst.group for inst in part])
        gold = np.array([inst.gold_label for inst in part])
        decisions = np.zeros(len(part), dtype=int)
        decisions[groups == GROUP_A] = dec_a
        dec_na, tpr_na, ok_na = simulate_advantaged_noise(
            gold[groups == GROUP_NOT_A], spec.advantaged_tpr, spec.advantaged_tol, rng
        )
        decisions[groups == GROUP_NOT_A] = dec_na
        instances = tuple(replace(inst, decision=int(d)) for inst, d in zip(part, decisions))
        ds = DecisionSet(hid, instances)
        decision_sets.append(ds)
        gaps[hid] = true_gap(decisions, gold, groups)
        flags = tuple(meta.get("flags", ())) + (() if ok_na else ("closest_attainable_not_a",))
        info[hid] = HumanSimInfo(
            tpr_a=float(meta["tpr_a"]),
            tpr_not_a=tpr_na,
            target_a=meta.get("target_a"),
            threshold=meta.get("threshold"),
            coefficient=meta.get("coefficient"),
            flags=flags,
        )
    return SimulatedWorld(tuple(decision_sets), reserve, gaps, info, spec, tuple(feature_names))


def build_world(
    instances: Sequence[Instance],
    spec: ScenarioSpec,
    feature_names: Sequence[str] = (),
    reserve_per_group: int = 400,
    label_learner: LogisticConfig | None = None,
) -> SimulatedWorld:
    """Shape labels, reserve the gold pool, split across humans and simulate decisions."""
    shaped = shape_prevalence(instances, spec.prevalence, label_learner, spec.seed)
    reserve = sample_gs_pool(shaped, reserve_per_group, spec.seed)
    taken = reserve.uids
    rest = [inst for inst in shaped if inst.uid not in taken]
    parts = stratified_partition(rest, spec.n_humans, spec.seed + 1)
    if spec.bias_kind == CORRECT:
        sims = simulate_correct_ordering(parts, spec.targets, spec.sim_tol, label_learner)
    else:
        sims = simulate_incorrect_ordering(parts, reserve.instances, spec, label_learner)
    return _assemble(parts, sims, spec, reserve, feature_names)


def build_linear_world(
    tpr_targets: Sequence[float] = (0.55, 0.65, 0.75, 0.85, 0.95),
    n_per_human: int = 2000,
    gold_size: int = 4000,
    advantaged_tpr: float = 0.95,
    prevalence: float = 0.3,
    seed: int = 0,
) -> SimulatedWorld:
    """World whose humans decide by a linear rule on the observed features.

    A latent quality ``q = v.x`` is drawn per group on a jittered stratified
    grid over [0, 1] and the first feature is solved for, so empirical rates
    match population rates to within one grid cell. Gold labels are
    ``q >= 1 - prevalence``; human k applies a stricter cut to group a
    (TPR ``tpr_targets[k]``) and a milder one to group ~a (TPR
    ``advantaged_tpr``). A logistic model of the decisions is correctly
    specified.
    """
    v = np.array([0.5, 0.3, 0.2])
    tau = 1 - prevalence
    rng = np.random.default_rng(seed)

    def draw(n):
        rows, groups = [], []
        for g, m in ((GROUP_A, n // 2), (GROUP_NOT_A, n - n // 2)):
            q = (rng.permutation(m) + rng.random(m)) / m
            rest = rng.random((m, 2))
            x0 = (q - rest @ v[1:]) / v[0]
            rows.append(np.column_stack([x0, rest]))
            groups.append(np.full(m, g))
        return np.vstack(rows), np.concatenate(groups)

    decision_sets, gaps, info = [], {}, {}
    row = 0
    for k, t in enumerate(tpr_targets):
        x, g = draw(n_per_human)
        q = x @ v
        y = (q >= tau).astype(int)
        cut = np.where(g == GROUP_A, 1 - prevalence * t, 1 - prevalence * advantaged_tpr)
        d = (q >= cut).astype(int)
        instances = tuple(
            Instance(tuple(x[i].tolist()), int(g[i]), int(y[i]), int(d[i]), row=row + i, dataset_id="linear")
            for i in range(n_per_human)
        )
        row += n_per_human
        hid = f"h{k + 1:02d}"
        decision_sets.append(DecisionSet(hid, instances))
        gaps[hid] = true_gap(d, y, g)
        pa = (g == GROUP_A) & (y == 1)
        pn = (g == GROUP_NOT_A) & (y == 1)
        info[hid] = HumanSimInfo(
            tpr_a=float(d[pa].mean()), tpr_not_a=float(d[pn].mean()), target_a=float(t)
        )
    x, g = draw(gold_size)
    y = (x @ v >= tau).astype(int)
    gold = GoldStandardSet(tuple(
        Instance(tuple(x[i].tolist()), int(g[i]), int(y[i]), row=row + i, dataset_id="linear")
        for i in range(gold_size)
    ))
    spec = ScenarioSpec(bias_kind=CORRECT, n_humans=len(tpr_targets), prevalence=prevalence,
                        tpr_range=(min(tpr_targets), max(tpr_targets)),
                        advantaged_tpr=advantaged_tpr, seed=seed)
    return SimulatedWorld(tuple(decision_sets), gold, gaps, info, spec, ("q1", "q2", "q3"))


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

MANIFEST_VERSION = 1


def save_world(world: SimulatedWorld, out_dir: str | Path) -> Path:
    """Write one CSV per human, the gold reserve CSV and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(world.feature_names) or [f"f{j}" for j in range(world.reserve.X.shape[1])]
    for ds in world.decision_sets:
        write_instances_csv(out / f"human_{ds.human_id}.csv", ds.instances, names)
    write_instances_csv(out / "gold.csv", world.reserve.instances, names)
    dataset_id = world.reserve.instances[0].dataset_id
    manifest = {
        "version": MANIFEST_VERSION,
        "dataset_id": dataset_id,
        "feature_names": names,
        "humans": [ds.human_id for ds in world.decision_sets],
        "true_gaps": world.true_gaps,
        "info": {h: asdict(i) for h, i in world.info.items()},
        "spec": world.spec.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def load_world(path: str | Path) -> SimulatedWorld:
    path = Path(path)
    m = json.loads((path / "manifest.json").read_text())
    if m.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported world manifest version {m.get('version')!r}")
    dsid = m["dataset_id"]
    decision_sets = tuple(
        DecisionSet(h, tuple(read_instances_csv(path / f"human_{h}.csv", dsid)[0])) for h in m["humans"]
    )
    reserve = GoldStandardSet(tuple(read_instances_csv(path / "gold.csv", dsid)[0]))
    info = {h: HumanSimInfo(**{**d, "flags": tuple(d["flags"])}) for h, d in m["info"].items()}
    return SimulatedWorld(
        decision_sets, reserve, {h: float(v) for h, v in m["true_gaps"].items()}, info,
        ScenarioSpec(**m["spec"]), tuple(m["feature_names"]),
    )
