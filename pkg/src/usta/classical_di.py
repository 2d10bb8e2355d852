"""Classical difference images: differencing, ratioing, CVA, PCA, MAD, IR-MAD.

Every generator returns a :class:`ScalarMap` on [0, 1] so the outputs can
share one Otsu threshold stage.
"""

from __future__ import annotations

import math

import numpy as np

from .raster import RasterImage, ScalarMap

RATIO_EPS = 1e-3
RIDGE = 1e-6
# min-max spreads below this are treated as a constant map
_FLAT = 1e-12


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def _pair(x1: RasterImage, x2: RasterImage):
    if x1.data.shape != x2.data.shape:
        raise ShapeError(f"image shapes differ: {x1.data.shape} vs {x2.data.shape}")
    return x1.data, x2.data


def _rescale(values):
    lo, hi = values.min(), values.max()
    if hi - lo <= _FLAT:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def cva(x1: RasterImage, x2: RasterImage) -> ScalarMap:
    """Change-vector magnitude, divided by sqrt(C) so a full swing in every channel maps to 1."""
    a, b = _pair(x1, x2)
    mag = np.sqrt(np.sum((a - b) ** 2, axis=2)) / math.sqrt(a.shape[2])
    return ScalarMap(np.minimum(mag, 1.0))


def image_diff(x1: RasterImage, x2: RasterImage) -> ScalarMap:
    a, b = _pair(x1, x2)
    return ScalarMap(np.mean(np.abs(a - b), axis=2))


def image_ratio(x1: RasterImage, x2: RasterImage) -> ScalarMap:
    a, b = _pair(x1, x2)
    a, b = a + RATIO_EPS, b + RATIO_EPS
    return ScalarMap(np.mean(1.0 - np.minimum(a, b) / np.maximum(a, b), axis=2))


def pca_di(x1: RasterImage, x2: RasterImage, k: int = 1) -> ScalarMap:
    """Norm of the difference vectors projected on the top-k principal axes of their covariance."""
    a, b = _pair(x1, x2)
    c = a.shape[2]
    if not 1 <= k <= c:
        raise ValueError(f"component count must be in [1, {c}], got {k}")
    d = (a - b).reshape(-1, c)
    cov = np.atleast_2d(np.cov(d, rowvar=False, bias=True))
    if not np.any(cov):
        return ScalarMap(np.zeros(a.shape[:2]))
    evals, evecs = np.linalg.eigh(cov)
    top = evecs[:, np.argsort(evals)[::-1][:k]]
    energy = np.linalg.norm(d @ top, axis=1)
    return ScalarMap(_rescale(energy).reshape(a.shape[:2]))


# -- chi-square tail ------------------------------------------------------------

def _gammainc_series(a, x, iters=500):
    """Lower regularised gamma P(a, x) by its power series (good for x < a + 1)."""
    term = np.full_like(x, 1.0 / a)
    total = term.copy()
    ap = np.full_like(x, a)
    for _ in range(iters):
        ap += 1.0
        term *= x / ap
        total += term
        if np.all(np.abs(term) < np.abs(total) * 1e-16):
            break
    return total * np.exp(-x + a * np.log(x) - math.lgamma(a))


def _gammaincc_cfrac(a, x, iters=500):
    """Upper regularised gamma Q(a, x) by Lentz's continued fraction (good for x >= a + 1)."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, iters + 1):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = b + an / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h *= delta
        if np.all(np.abs(delta - 1.0) < 1e-16):
            break
    return np.exp(-x + a * np.log(x) - math.lgamma(a)) * h


def gammaincc(a: float, x) -> np.ndarray:
    """Upper regularised incomplete gamma Q(a, x) for x >= 0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.ones_like(x)
    pos = x > 0
    small = pos & (x < a + 1.0)
    large = pos & ~small
    if np.any(small):
        out[small] = 1.0 - _gammainc_series(a, x[small])
    if np.any(large):
        out[large] = _gammaincc_cfrac(a, x[large])
    return np.clip(out, 0.0, 1.0)


def chi2_sf(x, dof: int) -> np.ndarray:
    """Upper-tail probability of the chi-square distribution."""
    return gammaincc(dof / 2.0, np.asarray(x, dtype=np.float64) / 2.0)


# -- MAD / IR-MAD -----------------------------------------------------------------

def _ridged(cov, name):
    c = cov.shape[0]
    lam = RIDGE * np.trace(cov) / c
    reg = cov + lam * np.eye(c)
    try:
        chol = np.linalg.cholesky(reg)
    except np.linalg.LinAlgError:
        raise NumericError(f"covariance {name} is singular after ridge regularisation") from None
    return reg, chol


def _mad_pass(a, b, weights):
    """One weighted CCA; returns (chi-square per pixel, canonical correlations)."""
    if weights is None:
        ma, mb = a.mean(axis=0), b.mean(axis=0)
        ac, bc = a - ma, b - mb
        n = a.shape[0]
        s11, s22, s12 = ac.T @ ac / n, bc.T @ bc / n, ac.T @ bc / n
    else:
        wsum = weights.sum()
        if wsum <= 0:
            raise NumericError("all IR-MAD weights vanished")
        ma, mb = weights @ a / wsum, weights @ b / wsum
        ac, bc = a - ma, b - mb
        wa = ac * weights[:, None]
        s11, s22, s12 = wa.T @ ac / wsum, (bc * weights[:, None]).T @ bc / wsum, wa.T @ bc / wsum
    s11, l1 = _ridged(s11, "S11 (first image)")
    s22, l2 = _ridged(s22, "S22 (second image)")

    # generalised symmetric eigenproblem  S12 S22^-1 S21 u = rho^2 S11 u, via Cholesky of S11
    m = s12 @ np.linalg.solve(s22, s12.T)
    li = np.linalg.inv(l1)
    rho2, y = np.linalg.eigh(li @ m @ li.T)
    order = np.argsort(rho2)[::-1]
    rho2, y = np.clip(rho2[order], 0.0, 1.0), y[:, order]
    rho = np.sqrt(rho2)
    u = li.T @ y                                   # u^T S11 u = I
    v = np.linalg.solve(s22, s12.T @ u)            # direction of the paired variates
    norms = np.sqrt(np.einsum("ij,ij->j", v, s22 @ v))
    dead = norms <= 1e-300
    if np.any(dead):
        # zero correlation leaves the pairing free; any unit-variance direction will do
        v[:, dead] = np.linalg.inv(l2).T[:, : v.shape[1]][:, dead]
        norms[dead] = 1.0
    v /= norms                                     # v^T S22 v = 1, corr(u, v) >= 0
    mad = ac @ u - bc @ v
    var = np.maximum(2.0 * (1.0 - rho), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(var > 0, mad**2 / np.where(var > 0, var, 1.0), 0.0)
    return z.sum(axis=1), rho


def _flatten_pair(x1, x2):
    a, b = _pair(x1, x2)
    c = a.shape[2]
    return a.reshape(-1, c), b.reshape(-1, c), a.shape[:2]


def mad_statistic(x1: RasterImage, x2: RasterImage, max_iter: int = 1, tol: float = 1e-6):
    """Raw chi-square statistic (H, W) and canonical correlations of (IR-)MAD.

    Each pass after the first weights pixels by the chi-square upper-tail
    probability of the previous statistic (C degrees of freedom), so likely
    no-change pixels dominate the next CCA.  Stops once the canonical
    correlations move by less than ``tol``; running out of iterations is not
    an error.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    a, b, hw = _flatten_pair(x1, x2)
    chi2, rho = _mad_pass(a, b, None)
    for _ in range(max_iter - 1):
        weights = chi2_sf(chi2, a.shape[1])
        chi2, new_rho = _mad_pass(a, b, weights)
        delta = np.max(np.abs(new_rho - rho))
        rho = new_rho
        if delta < tol:
            break
    return chi2.reshape(hw), rho


def mad(x1: RasterImage, x2: RasterImage) -> ScalarMap:
    """Chi-square statistic of the MAD variates, rescaled to [0, 1]."""
    chi2, _ = mad_statistic(x1, x2)
    return ScalarMap(_rescale(chi2))


def irmad(x1: RasterImage, x2: RasterImage, max_iter: int = 30, tol: float = 1e-6) -> ScalarMap:
    """Iteratively reweighted MAD, rescaled to [0, 1]; see :func:`mad_statistic`."""
    chi2, _ = mad_statistic(x1, x2, max_iter, tol)
    return ScalarMap(_rescale(chi2))


GENERATORS = {
    "diff": image_diff,
    "ratio": image_ratio,
    "cva": cva,
    "pca": pca_di,
    "mad": mad,
    "irmad": irmad,
}
