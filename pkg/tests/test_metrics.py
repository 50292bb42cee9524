import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from humanbias.metrics import (
    Cells,
    GroupConfusion,
    UndefinedRateError,
    confusion,
    fpr_gap,
    mae,
    rpr_ratio,
    selection_rate_gap,
    tpr_gap,
)


def brute_cells(pred, ref, grp, g):
    tp = fp = tn = fn = 0
    for p, r, h in zip(pred, ref, grp):
        if h != g:
            continue
        if p and r:
            tp += 1
        elif p and not r:
            fp += 1
        elif not p and not r:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def test_confusion_hand_count():
    conf = confusion([1, 0, 1, 0], [1, 1, 0, 0], [1, 1, 0, 0])
    assert conf.a == Cells(tp=1, fp=0, tn=0, fn=1)
    assert conf.not_a == Cells(tp=0, fp=1, tn=1, fn=0)


def test_confusion_equal_inputs_have_no_errors():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 50)
    g = rng.integers(0, 2, 50)
    conf = confusion(y, y, g)
    assert conf.a.fp == conf.a.fn == conf.not_a.fp == conf.not_a.fn == 0


def test_confusion_single_group():
    conf = confusion([1, 0, 1], [1, 1, 0], [1, 1, 1])
    assert conf.not_a == Cells()


def test_confusion_length_mismatch():
    with pytest.raises(ValueError):
        confusion([1, 0], [1], [0, 1])


def test_tpr_gap_examples():
    # most-biased simulated human: 0.54 vs 0.95
    conf = GroupConfusion(Cells(tp=54, fn=46), Cells(tp=95, fn=5))
    assert tpr_gap(conf).value == pytest.approx(-0.41)
    same = Cells(tp=3, fp=2, tn=4, fn=1)
    assert tpr_gap(GroupConfusion(same, same)).value == 0.0
    assert tpr_gap(GroupConfusion(Cells(tp=3, fn=1), Cells(tp=1, fn=3))).value == 0.5


def test_tpr_gap_undefined_without_positives():
    with pytest.raises(UndefinedRateError):
        tpr_gap(GroupConfusion(Cells(tp=1, fn=1), Cells(fp=2, tn=2)))


def test_rpr_examples():
    assert rpr_ratio(Cells(tp=3, fp=1, fn=1)) == 1.0
    assert rpr_ratio(Cells(tp=7, fp=0, fn=0)) == 1.0
    assert rpr_ratio(Cells(tp=2, fp=4, fn=1)) == 2.0


def test_selection_rate_examples():
    d = [1] * 2 + [0] * 8 + [1] * 5 + [0] * 5
    g = [1] * 10 + [0] * 10
    assert selection_rate_gap(d, g).value == pytest.approx(-0.3)
    assert selection_rate_gap([1, 0, 1, 0], [1, 1, 0, 0]).value == 0.0
    assert selection_rate_gap([1] * 6, [1, 0, 1, 0, 1, 0]).value == 0.0
    assert selection_rate_gap(d, g, normalize=False).value == -3.0


def test_mae_examples():
    assert mae([0.1, 0.2], [0.1, 0.2]) == 0.0
    assert mae([0.1, -0.2], [0.0, -0.1]) == pytest.approx(0.1)
    assert mae([0.5], [-0.5]) == 1.0
    with pytest.raises(ValueError):
        mae([1.0], [1.0, 2.0])


triples = st.integers(1, 200).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
)


@settings(max_examples=200, deadline=None)
@given(triples)
def test_confusion_matches_brute_force(t):
    pred, ref, grp = t
    conf = confusion(pred, ref, grp)
    for g, cells in ((1, conf.a), (0, conf.not_a)):
        assert (cells.tp, cells.fp, cells.tn, cells.fn) == brute_cells(pred, ref, grp, g)
        assert cells.n == sum(1 for h in grp if h == g)


@settings(max_examples=200, deadline=None)
@given(triples)
def test_tpr_gap_antisymmetric(t):
    conf = confusion(*t)
    try:
        v = tpr_gap(conf).value
    except UndefinedRateError:
        return
    assert tpr_gap(conf.swapped()).value == -v


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 500), st.integers(0, 500), st.integers(0, 500))
def test_rpr_identity(tp, fp, fn):
    recall = tp / (tp + fn)
    precision = tp / (tp + fp)
    assert abs(rpr_ratio(Cells(tp=tp, fp=fp, fn=fn)) - recall / precision) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=50), st.randoms(use_true_random=False))
def test_mae_properties(est, rnd):
    tru = [e * 0.5 for e in est]
    v = mae(est, tru)
    assert v >= 0
    assert (v == 0) == all(e == t for e, t in zip(est, tru))
    order = list(range(len(est)))
    rnd.shuffle(order)
    assert mae([est[i] for i in order], [tru[i] for i in order]) == pytest.approx(v, abs=1e-15)


def test_fpr_gap_structure():
    conf = GroupConfusion(Cells(fp=1, tn=3, tp=1), Cells(fp=2, tn=2, tp=1))
    assert fpr_gap(conf).value == pytest.approx(0.25 - 0.5)
    assert fpr_gap(conf).kind == "fpr"
    assert math.isclose(fpr_gap(conf.swapped()).value, 0.25)
