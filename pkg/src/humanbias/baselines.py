"""Benchmark bias estimators: selection rates, a gold-pool model, confident learning."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import DecisionSet, GoldStandardSet, design_matrix, stratified_folds
from .learners import BoostedConfig, LearnerConfig, TrainingError, fit_model
from .mdba import BiasEstimate
from .metrics import UndefinedRateError, confusion, selection_rate_gap, tpr_gap

MIN_GS_PER_CLASS = 20
CL_FOLDS = 5


class DegeneratePoolError(ValueError):
    pass


def sr_estimate(decision_sets: Sequence[DecisionSet], normalize: bool = True) -> list[BiasEstimate]:
    out = []
    for ds in decision_sets:
        try:
            gap = selection_rate_gap(ds.decisions, ds.groups, normalize=normalize).value
            out.append(BiasEstimate(ds.human_id, "SR", gap))
        except UndefinedRateError as exc:
            out.append(BiasEstimate(ds.human_id, "SR", None, error=str(exc)))
    return out


def _gap_against_reference(ds: DecisionSet, reference: np.ndarray, method: str) -> BiasEstimate:
    # the human's decisions play the prediction role; the model output is the reference
    try:
        gap = tpr_gap(confusion(ds.decisions, reference, ds.groups)).value
        return BiasEstimate(ds.human_id, method, gap)
    except UndefinedRateError as exc:
        return BiasEstimate(ds.human_id, method, None, error=str(exc))


def gs_estimate(
    decision_sets: Sequence[DecisionSet],
    gold: GoldStandardSet,
    learner: LearnerConfig | None = None,
) -> list[BiasEstimate]:
    learner = learner or BoostedConfig()
    counts = np.bincount(gold.labels, minlength=2)
    if counts.min() < MIN_GS_PER_CLASS:
        raise TrainingError(
            f"gold pool has class counts {counts.tolist()}, need {MIN_GS_PER_CLASS} per class"
        )
    model = fit_model(design_matrix(gold), gold.labels, learner)
    return [
        _gap_against_reference(ds, (model.predict_proba(design_matrix(ds)) >= 0.5).astype(int), "GS")
        for ds in decision_sets
    ]


@dataclass(frozen=True, eq=False)
class ConfidentJoint:
    counts: np.ndarray  # [given label, estimated true label]
    thresholds: np.ndarray
    given: np.ndarray
    assigned: np.ndarray  # per example: estimated true label, -1 when uncounted

    @property
    def off_diagonal(self) -> np.ndarray:
        """Mask of examples counted in an off-diagonal cell."""
        return (self.assigned >= 0) & (self.assigned != self.given)


def cl_confident_joint(probabilities, given_labels) -> ConfidentJoint:
    """Binary confident joint.

    ``probabilities`` are out-of-sample P(y=1). Class thresholds are the mean
    self-confidence per given label; an example lands in cell (given, j) for the
    qualifying class j with the highest probability, ties going to the given
    label.
    """
    p1 = np.asarray(probabilities, dtype=float)
    given = np.asarray(given_labels, dtype=int)
    probs = np.column_stack([1 - p1, p1])
    thresholds = np.empty(2)
    for j in (0, 1):
        if not np.any(given == j):
            raise DegeneratePoolError(f"class {j} absent from given labels")
        thresholds[j] = probs[given == j, j].mean()
    qualifies = probs >= thresholds[None, :] - 1e-12
    masked = np.where(qualifies, probs, -np.inf)
    best = masked.max(axis=1)
    any_q = qualifies.any(axis=1)
    own = masked[np.arange(len(given)), given]
    other = 1 - given
    assigned = np.where(own >= best, given, other)
    assigned = np.where(any_q, assigned, -1)
    counts = np.zeros((2, 2), dtype=int)
    for i in (0, 1):
        for j in (0, 1):
            counts[i, j] = int(np.sum((given == i) & (assigned == j)))
    return ConfidentJoint(counts=counts, thresholds=thresholds, given=given, assigned=assigned)


def cross_val_proba(X, y, learner: LearnerConfig, folds: int = CL_FOLDS, seed: int = 0) -> np.ndarray:
    parts = stratified_folds(np.asarray(y).tolist(), folds, np.random.default_rng(seed))
    out = np.empty(len(y))
    for k, test in enumerate(parts):
        train = np.concatenate([parts[j] for j in range(folds) if j != k])
        out[test] = fit_model(X[train], y[train], learner).predict_proba(X[test])
    return out


def cl_clean_model(decision_sets, gold, learner, seed: int = 0):
    """Fit the noise-pruned model on the merged pool; also returns the confident joint."""
    X = np.vstack([design_matrix(gold)] + [design_matrix(ds) for ds in decision_sets])
    y = np.concatenate([gold.labels] + [ds.decisions for ds in decision_sets])
    if len(np.unique(y)) < 2:
        raise DegeneratePoolError("merged pool has a single label class")
    probs = cross_val_proba(X, y, learner, seed=seed)
    cj = cl_confident_joint(probs, y)
    keep = ~cj.off_diagonal
    if len(np.unique(y[keep])) < 2:
        raise DegeneratePoolError("pruning removed an entire class")
    return fit_model(X[keep], y[keep], learner), cj


def cl_estimate(
    decision_sets: Sequence[DecisionSet],
    gold: GoldStandardSet,
    learner: LearnerConfig | None = None,
    seed: int = 0,
) -> list[BiasEstimate]:
    learner = learner or BoostedConfig()
    model, _ = cl_clean_model(decision_sets, gold, learner, seed)
    return [
        _gap_against_reference(ds, (model.predict_proba(design_matrix(ds)) >= 0.5).astype(int), "CL")
        for ds in decision_sets
    ]
