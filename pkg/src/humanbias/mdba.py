"""Model-based human decision bias assessment.

Per human: fit a model of their decisions, recalibrate per-group thresholds so
the model's predicted-positive volume matches the human's positive volume at a
fixed ratio ``c``, classify the gold pool with the recalibrated model and
measure the TPR gap against gold labels.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .datamodel import GROUP_A, GROUP_NOT_A, DecisionSet, GoldStandardSet, design_matrix, overlap
from .learners import BoostedConfig, LearnerConfig, ProbClassifier, TrainingError, fit_model
from .metrics import UndefinedRateError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MdbaConfig:
    c: float = 1.0
    learner: LearnerConfig = field(default_factory=BoostedConfig)
    rpr_tol: float = 0.05
    rescale_by_c: bool = True
    naive_mode: bool = False

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not self.rpr_tol > 0:
            raise ValueError("rpr_tol must be positive")


@dataclass(frozen=True)
class ThresholdPair:
    pi_a: float
    pi_not_a: float
    rpr_a: float | None = None
    rpr_not_a: float | None = None
    # True when no candidate threshold reached the tolerance band for some group
    approximate: bool = False


@dataclass
class BiasEstimate:
    human_id: str
    method: str
    gap: float | None
    uncertainty: float | None = None
    c_used: float | None = None
    thresholds_used: list[ThresholdPair] = field(default_factory=list)
    attained_rpr: dict[str, float] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.gap is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds_used"] = [asdict(t) for t in self.thresholds_used]
        return d


def train_human_models(
    decision_sets: Sequence[DecisionSet], learner: LearnerConfig
) -> tuple[dict[str, ProbClassifier], dict[str, str]]:
    """One model per human; failures are collected instead of raised."""
    models, errors = {}, {}
    for ds in decision_sets:
        try:
            models[ds.human_id] = fit_model(design_matrix(ds), ds.decisions, learner)
        except TrainingError as exc:
            logger.warning("training failed for human %s: %s", ds.human_id, exc)
            errors[ds.human_id] = str(exc)
    return models, errors


def _group_thresholds(scores: np.ndarray, n_positive: int, c: float, tol: float):
    """Qualifying thresholds for one group, their attained ratios and a fallback flag."""
    if n_positive == 0:
        raise UndefinedRateError("no positive decisions in group; ratio is undefined")
    ordered = np.sort(scores)
    candidates = np.unique(np.concatenate([scores, [0.0, 1.0]]))
    predicted_pos = len(ordered) - np.searchsorted(ordered, candidates, side="left")
    ratios = predicted_pos / n_positive
    hit = np.abs(ratios - c) <= tol * c + 1e-12
    if hit.any():
        return candidates[hit], ratios[hit], False
    k = int(np.argmin(np.abs(ratios - c)))
    return candidates[[k]], ratios[[k]], True


def _search(model: ProbClassifier, ds: DecisionSet, c: float, tol: float):
    scores = model.predict_proba(design_matrix(ds))
    out = {}
    for g in (GROUP_A, GROUP_NOT_A):
        mask = ds.groups == g
        out[g] = _group_thresholds(scores[mask], int(ds.decisions[mask].sum()), c, tol)
    return out


def find_rpr_thresholds(model: ProbClassifier, ds: DecisionSet, c: float, tol: float) -> list[ThresholdPair]:
    """Every per-group threshold pair whose predicted/decided positive ratio is within ``tol*c`` of ``c``.

    Candidates are the distinct scores of the group plus 0 and 1; a score
    equal to the threshold counts as positive. A group with no qualifying
    candidate contributes its nearest attainable threshold and the pair is
    marked approximate.
    """
    found = _search(model, ds, c, tol)
    (ta, ra, fa), (tn, rn, fn) = found[GROUP_A], found[GROUP_NOT_A]
    return [
        ThresholdPair(float(x), float(y), float(rx), float(ry), fa or fn)
        for x, rx in zip(ta, ra)
        for y, ry in zip(tn, rn)
    ]


def _gold_tprs(scores: np.ndarray, positive: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    pos_scores = np.sort(scores[positive])
    if len(pos_scores) == 0:
        raise UndefinedRateError("gold pool has no positives in a group")
    hits = len(pos_scores) - np.searchsorted(pos_scores, thresholds, side="left")
    return hits / len(pos_scores)


def estimate_one(model: ProbClassifier, ds: DecisionSet, gold: GoldStandardSet, config: MdbaConfig) -> BiasEstimate:
    method = "MDBA-Naive" if config.naive_mode else "MDBA"
    flags: list[str] = []
    if config.naive_mode:
        thr = {GROUP_A: np.array([0.5]), GROUP_NOT_A: np.array([0.5])}
        ratios = {}
        scores = model.predict_proba(design_matrix(ds))
        for g in (GROUP_A, GROUP_NOT_A):
            mask = ds.groups == g
            n_pos = int(ds.decisions[mask].sum())
            if n_pos:
                ratios[g] = np.array([np.sum(scores[mask] >= 0.5) / n_pos])
            else:
                ratios[g] = np.array([np.nan])
    else:
        found = _search(model, ds, config.c, config.rpr_tol)
        thr = {g: found[g][0] for g in found}
        ratios = {g: found[g][1] for g in found}
        for g, name in ((GROUP_A, "a"), (GROUP_NOT_A, "not_a")):
            if found[g][2]:
                flags.append(f"rpr_nearest_attainable_{name}")

    gold_scores = model.predict_proba(design_matrix(gold))
    tprs = {}
    for g in (GROUP_A, GROUP_NOT_A):
        mask = gold.groups == g
        tprs[g] = _gold_tprs(gold_scores[mask], gold.labels[mask] == 1, thr[g])
    gaps = tprs[GROUP_A][:, None] - tprs[GROUP_NOT_A][None, :]
    gap = float(gaps.mean())
    spread = float(gaps.std())
    divisor = config.c if (config.rescale_by_c and not config.naive_mode) else 1.0
    pairs = [
        ThresholdPair(float(x), float(y), float(rx), float(ry), bool(flags))
        for x, rx in zip(thr[GROUP_A], ratios[GROUP_A])
        for y, ry in zip(thr[GROUP_NOT_A], ratios[GROUP_NOT_A])
    ]
    return BiasEstimate(
        human_id=ds.human_id,
        method=method,
        gap=gap / divisor,
        uncertainty=spread / divisor,
        c_used=None if config.naive_mode else config.c,
        thresholds_used=pairs,
        attained_rpr={
            "a": float(np.mean(ratios[GROUP_A])),
            "not_a": float(np.mean(ratios[GROUP_NOT_A])),
        },
        flags=flags,
    )


def estimate_bias(
    decision_sets: Sequence[DecisionSet], gold: GoldStandardSet, config: MdbaConfig | None = None
) -> list[BiasEstimate]:
    config = config or MdbaConfig()
    shared = overlap(gold, decision_sets)
    if shared:
        logger.warning("gold pool shares %d instances with the decision sets", len(shared))
    method = "MDBA-Naive" if config.naive_mode else "MDBA"
    models, errors = train_human_models(decision_sets, config.learner)
    out = []
    for ds in decision_sets:
        if ds.human_id in errors:
            out.append(BiasEstimate(ds.human_id, method, None, error=errors[ds.human_id]))
            continue
        try:
            out.append(estimate_one(models[ds.human_id], ds, gold, config))
        except UndefinedRateError as exc:
            out.append(BiasEstimate(ds.human_id, method, None, error=str(exc)))
    return out
