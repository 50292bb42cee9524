"""Confusion cells, error-rate gaps, the recall/precision ratio and MAE."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import GROUP_A, GROUP_NOT_A


class UndefinedRateError(ArithmeticError):
    """A rate whose denominator is zero (e.g. no positives in a group)."""


@dataclass(frozen=True)
class Cells:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class GroupConfusion:
    a: Cells
    not_a: Cells

    def swapped(self) -> GroupConfusion:
        return GroupConfusion(a=self.not_a, not_a=self.a)


@dataclass(frozen=True)
class GapValue:
    value: float
    kind: str = "tpr"
    orientation: str = "a - ~a"

    def __float__(self) -> float:
        return self.value


def _as_binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values).astype(int)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return arr


def confusion(predictions, references, groups) -> GroupConfusion:
    pred = _as_binary(predictions, "predictions")
    ref = _as_binary(references, "references")
    grp = _as_binary(groups, "groups")
    if not (len(pred) == len(ref) == len(grp)):
        raise ValueError(f"length mismatch: {len(pred)}, {len(ref)}, {len(grp)}")
    if len(pred) == 0:
        raise ValueError("confusion needs at least one instance")

    def cells(mask):
        p, r = pred[mask], ref[mask]
        return Cells(
            tp=int(np.sum((p == 1) & (r == 1))),
            fp=int(np.sum((p == 1) & (r == 0))),
            tn=int(np.sum((p == 0) & (r == 0))),
            fn=int(np.sum((p == 0) & (r == 1))),
        )

    return GroupConfusion(a=cells(grp == GROUP_A), not_a=cells(grp == GROUP_NOT_A))


def tpr(c: Cells) -> float:
    if c.tp + c.fn == 0:
        raise UndefinedRateError("true positive rate undefined: no positive references")
    return c.tp / (c.tp + c.fn)


def fpr(c: Cells) -> float:
    if c.fp + c.tn == 0:
        raise UndefinedRateError("false positive rate undefined: no negative references")
    return c.fp / (c.fp + c.tn)


def tpr_gap(conf: GroupConfusion) -> GapValue:
    return GapValue(tpr(conf.a) - tpr(conf.not_a), kind="tpr")


def fpr_gap(conf: GroupConfusion) -> GapValue:
    return GapValue(fpr(conf.a) - fpr(conf.not_a), kind="fpr")


def rpr_ratio(c: Cells) -> float:
    """Recall over precision, which simplifies to (TP + FP) / (TP + FN)."""
    if c.tp + c.fn == 0:
        raise UndefinedRateError("recall/precision ratio undefined: no positive references")
    return (c.tp + c.fp) / (c.tp + c.fn)


def selection_rate_gap(decisions, groups, normalize: bool = True) -> GapValue:
    """Positive-decision share in group a minus that in group ~a.

    With ``normalize=False`` the raw positive counts are differenced instead.
    """
    d = _as_binary(decisions, "decisions")
    g = _as_binary(groups, "groups")
    if len(d) != len(g):
        raise ValueError("length mismatch")
    in_a, in_not_a = d[g == GROUP_A], d[g == GROUP_NOT_A]
    if len(in_a) == 0 or len(in_not_a) == 0:
        raise UndefinedRateError("selection rate undefined: a group is empty")
    if normalize:
        return GapValue(float(in_a.mean() - in_not_a.mean()), kind="selection_rate")
    return GapValue(float(in_a.sum() - in_not_a.sum()), kind="selection_count")


def mae(estimates: Sequence[float], truths: Sequence[float]) -> float:
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if len(est) != len(tru):
        raise ValueError(f"length mismatch: {len(est)} vs {len(tru)}")
    if len(est) == 0:
        raise ValueError("mae of empty vectors")
    return float(np.mean(np.abs(est - tru)))


def true_gap(decisions, gold_labels, groups) -> float:
    """TPR gap of decisions measured against gold labels."""
    return tpr_gap(confusion(decisions, gold_labels, groups)).value
