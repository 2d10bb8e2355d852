"""Otsu and fixed thresholding of scalar maps into change maps."""

from __future__ import annotations

import numpy as np

from .raster import ChangeMap, ScalarMap

N_BINS = 256
NO_CHANGE_THRESHOLD = 1.0


def histogram(values) -> np.ndarray:
    """Counts over 256 equal bins on [0, 1]; value 1.0 falls in the last bin."""
    idx = np.minimum((np.asarray(values) * N_BINS).astype(np.int64), N_BINS - 1)
    return np.bincount(idx.ravel(), minlength=N_BINS)


def otsu(di: ScalarMap):
    """Otsu's threshold over the bin boundaries k/256, k = 1..255.

    Ties go to the smallest threshold.  A map with every value in one bin has
    no valid split and yields an all-zero map with threshold 1.0.
    """
    hist = [int(c) for c in histogram(di.data)]
    # running prefix sums keep this O(bins); the score is w0*w1*(mu0-mu1)^2 * n^2
    n_total = sum(hist)
    s_total = sum(i * c for i, c in enumerate(hist))
    n0 = s0 = 0
    best_k, best = None, None
    for k in range(1, N_BINS):
        n0 += hist[k - 1]
        s0 += (k - 1) * hist[k - 1]
        n1 = n_total - n0
        if n0 == 0 or n1 == 0:
            continue
        d = n0 * (s_total - s0) - n1 * s0
        num, den = d * d, n0 * n1
        # num/den > best_num/best_den, compared without division
        if best is None or num * best[1] > best[0] * den:
            best, best_k = (num, den), k
    if best_k is None:
        return ChangeMap(np.zeros(di.data.shape, dtype=np.uint8)), NO_CHANGE_THRESHOLD
    t = best_k / N_BINS
    return fixed_threshold(di, t), t


def fixed_threshold(di: ScalarMap, t: float) -> ChangeMap:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    return ChangeMap((di.data >= t).astype(np.uint8))
