import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from usta.metrics import Confusion, confusion, f1, f1_score, f_from, fmeasure, precision, recall, report_row
from usta.raster import ChangeMap


def _maps(seed, shape=(16, 16)):
    rng = np.random.default_rng(seed)
    return ChangeMap((rng.random(shape) < 0.3).astype(np.uint8)), ChangeMap((rng.random(shape) < 0.3).astype(np.uint8))


def test_confusion_loop_oracle():
    pred, ref = _maps(0)
    counts = {"tp": 0, "fp": 0, "fn": 0, "tn": 0}
    for p, r in zip(pred.data.ravel().tolist(), ref.data.ravel().tolist()):
        key = {(1, 1): "tp", (1, 0): "fp", (0, 1): "fn", (0, 0): "tn"}[(p, r)]
        counts[key] += 1
    assert confusion(pred, ref) == Confusion(**counts)


def test_identical_and_complement():
    pred, ref = _maps(1)
    c = confusion(ref, ref)
    assert c.fp == c.fn == 0
    c = confusion(ref.complement(), ref)
    assert c.tp == c.tn == 0


def test_rates():
    assert precision(Confusion(2, 1, 0, 0)).value == pytest.approx(2 / 3)
    assert recall(Confusion(2, 0, 1, 0)).value == pytest.approx(2 / 3)
    r = precision(Confusion(0, 0, 3, 5))
    assert r.value == 0 and r.degenerate
    assert not precision(Confusion(1, 0, 0, 0)).degenerate


def test_f1_fixed_point_and_perfect():
    for p in (0.1, 0.37, 2 / 3, 1.0):
        assert f_from(p, p) == pytest.approx(p)
    assert f_from(2 / 3, 2 / 3) == pytest.approx(2 / 3)
    _, ref = _maps(2)
    c = confusion(ref, ref)
    assert precision(c).value == recall(c).value == f1(c) == 1.0
    assert f_from(0.0, 0.0) == 0.0


def test_weight_must_be_positive():
    with pytest.raises(ValueError):
        fmeasure(Confusion(1, 1, 1, 1), 0)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        confusion(ChangeMap(np.zeros((2, 2), np.uint8)), ChangeMap(np.zeros((2, 3), np.uint8)))


def test_report_row():
    _, ref = _maps(3)
    assert report_row(confusion(ref, ref), "cva") == "cva,100.0,100.0,100.0"
    assert report_row(Confusion(1, 1, 1, 1)) == "50.0,50.0,50.0"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_swap_and_bounds(seed):
    pred, ref = _maps(seed, (9, 7))
    c, s = confusion(pred, ref), confusion(ref, pred)
    assert (c.fp, c.fn) == (s.fn, s.fp)
    assert precision(c).value == recall(s).value
    assert f1(c) == pytest.approx(f1(s))
    assert fmeasure(c, 1.0) == f1(c)
    pr, rc = precision(c).value, recall(c).value
    if pr > 0 and rc > 0:
        assert min(pr, rc) - 1e-12 <= f1(c) <= max(pr, rc) + 1e-12
    assert f1_score(pred, ref) == f1(c)
    assert sum(c) == 63
