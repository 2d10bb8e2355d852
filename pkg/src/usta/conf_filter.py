"""Neighbourhood-agreement confidence for pseudo labels.

For each pixel whose full ``w x w`` window lies inside the map, the
confidence is the fraction of window pixels carrying the same label as the
centre (an XNOR count, the centre included).  Pixels closer than
``(w - 1) / 2`` to any border have no full window and get confidence 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import ChangeMap, ScalarMap


@dataclass(frozen=True)
class FilterConfig:
    w: int = 5
    alpha: float = 0.5

    def __post_init__(self):
        _check_w(self.w)
        _check_alpha(self.alpha)


def _check_w(w):
    if isinstance(w, bool) or int(w) != w or w < 3 or w % 2 == 0:
        raise ValueError(f"filter size must be an odd integer >= 3, got {w}")


def _check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")


def filter(cm: ChangeMap, w: int) -> ScalarMap:  # noqa: A001
    _check_w(w)
    labels = cm.data.astype(np.int64)
    h, wd = labels.shape
    out = np.zeros((h, wd))
    if h < w or wd < w:
        return ScalarMap(out)
    # window sums of the label-1 indicator via an integral image
    ii = np.zeros((h + 1, wd + 1), dtype=np.int64)
    ii[1:, 1:] = labels.cumsum(axis=0).cumsum(axis=1)
    ones = ii[w:, w:] - ii[:-w, w:] - ii[w:, :-w] + ii[:-w, :-w]
    r = (w - 1) // 2
    centre = labels[r:h - r, r:wd - r]
    matches = np.where(centre == 1, ones, w * w - ones)
    out[r:h - r, r:wd - r] = matches / (w * w)
    return ScalarMap(out)


def gate(pc: ScalarMap, alpha: float) -> ScalarMap:
    """Keep confidences >= alpha, zero the rest."""
    _check_alpha(alpha)
    return ScalarMap(np.where(pc.data >= alpha, pc.data, 0.0))
