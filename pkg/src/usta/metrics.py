"""Precision / recall / F-measure of a change map against a reference."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .raster import ChangeMap


class Confusion(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int


class Rate(NamedTuple):
    """A ratio; ``degenerate`` marks a zero denominator (value then 0)."""

    value: float
    degenerate: bool = False


def confusion(pred: ChangeMap, ref: ChangeMap) -> Confusion:
    if pred.data.shape != ref.data.shape:
        raise ValueError(f"map shapes differ: {pred.data.shape} vs {ref.data.shape}")
    p = pred.data.astype(bool)
    r = ref.data.astype(bool)
    tp = int(np.count_nonzero(p & r))
    fp = int(np.count_nonzero(p & ~r))
    fn = int(np.count_nonzero(~p & r))
    return Confusion(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num, den):
    return Rate(0.0, True) if den == 0 else Rate(num / den)


def precision(c: Confusion) -> Rate:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: Confusion) -> Rate:
    return _ratio(c.tp, c.tp + c.fn)


def f_from(pr: float, rc: float, a: float = 1.0) -> float:
    if a <= 0:
        raise ValueError(f"F-measure weight must be positive, got {a}")
    if pr + rc == 0:
        return 0.0
    a2 = a * a
    return (a2 + 1.0) * pr * rc / (a2 * (pr + rc))


def fmeasure(c: Confusion, a: float = 1.0) -> float:
    return f_from(precision(c).value, recall(c).value, a)


def f1(c: Confusion) -> float:
    return fmeasure(c, 1.0)


def f1_score(pred: ChangeMap, ref: ChangeMap) -> float:
    return f1(confusion(pred, ref))


def report_row(c: Confusion, method: str | None = None) -> str:
    """``method,Pr,Rc,F1`` in percent with one decimal (method omitted when None)."""
    cells = [f"{100 * v:.1f}" for v in (precision(c).value, recall(c).value, f1(c))]
    return ",".join(([method] if method is not None else []) + cells)
