"""Deterministic synthetic bitemporal scenes with exact change references.

A scene is a smooth textured background with layered rectangles and
ellipses.  The second date copies the first and then inserts new shapes,
recolours existing ones, or removes them (exposing the background).  Every
altered pixel changes by at least ``MIN_CONTRAST`` in some channel; each
change draws its own contrast, so some sit close to the noise floor.  The
reference marks exactly the pixels where the noiseless dates differ.
Independent Gaussian noise is added to each date afterwards.
"""

from __future__ import annotations

import numpy as np

from .raster import ChangeMap, RasterImage

MIN_CONTRAST = 0.1
STRONG_CONTRAST = (0.25, 0.5)
WEAK_CONTRAST = (0.12, 0.2)
WEAK_SHARE = 0.35
BENCHMARK_SIZE = 224
BENCHMARK_FRACTIONS = (0.03, 0.05, 0.1, 0.15, 0.2)
BENCHMARK_NOISE = 0.05


class SceneConfigError(ValueError):
    pass


def _background(h, w, rng):
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    bg = np.empty((h, w, 3))
    for ch in range(3):
        base = rng.uniform(0.3, 0.6)
        gy, gx = rng.uniform(-0.12, 0.12, size=2)
        fy, fx = rng.uniform(2.0, 6.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        bg[:, :, ch] = base + gy * yy + gx * xx + 0.03 * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    return np.clip(bg, 0.0, 1.0)


def _shape_mask(h, w, rng, area):
    """Random rectangle or ellipse of roughly ``area`` pixels, clipped to the frame."""
    aspect = rng.uniform(0.5, 2.0)
    sh = max(2, int(round(np.sqrt(area * aspect))))
    sw = max(2, int(round(area / sh)))
    sh, sw = min(sh, h - 1), min(sw, w - 1)
    top = rng.integers(0, h - sh + 1)
    left = rng.integers(0, w - sw + 1)
    mask = np.zeros((h, w), dtype=bool)
    if rng.random() < 0.5:
        mask[top:top + sh, left:left + sw] = True
    else:
        yy, xx = np.mgrid[0:sh, 0:sw]
        cy, cx = (sh - 1) / 2, (sw - 1) / 2
        inside = ((yy - cy) / max(sh / 2, 1)) ** 2 + ((xx - cx) / max(sw / 2, 1)) ** 2 <= 1.0
        mask[top:top + sh, left:left + sw] = inside
    return mask


def _contrasting_colour(under, rng, contrast=None, tries=40, also=None):
    """A colour differing from every pixel in ``under`` (n, 3) by >= MIN_CONTRAST in some channel.

    With ``contrast`` set, the colour is offset from the mean of ``under`` by
    that much in its largest channel.  Rows of ``also`` must clear the same
    margin; this keeps repainted pixels away from their first-date colour.
    """
    centre = under.mean(axis=0)
    if also is not None:
        under = np.concatenate([under, also])
    for _ in range(tries):
        if contrast is None:
            colour = rng.uniform(0.05, 0.95, size=3)
        else:
            step = rng.uniform(-1.0, 1.0, size=3)
            colour = np.clip(centre + contrast * step / np.max(np.abs(step)), 0.0, 1.0)
        if np.all(np.max(np.abs(under - colour), axis=1) >= MIN_CONTRAST):
            return colour
    return None


def gen_scene(h: int, w: int, change_fraction: float, noise_sigma: float, seed: int):
    """Return ``(x1, x2, ref)`` for one scene; identical for identical arguments."""
    if h < 64 or w < 64 or h % 16 or w % 16:
        raise SceneConfigError(f"scene dims must be >= 64 and multiples of 16, got {h}x{w}")
    if not 0.0 < change_fraction < 0.5:
        raise SceneConfigError(f"change_fraction must lie in (0, 0.5), got {change_fraction}")
    if noise_sigma < 0:
        raise SceneConfigError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    n_px = h * w

    bg = _background(h, w, rng)
    x1 = bg.copy()
    objects = []
    for _ in range(max(4, n_px // 1200)):
        mask = _shape_mask(h, w, rng, rng.uniform(40, 900))
        colour = _contrasting_colour(bg[mask], rng, rng.uniform(0.2, 0.5))
        if colour is None:
            continue
        x1[mask] = colour
        objects.append(mask)

    x2 = x1.copy()
    target = change_fraction * n_px
    changed = np.zeros((h, w), dtype=bool)
    for _ in range(2000):
        deficit = target - changed.sum()
        if deficit <= 0.03 * target:
            break
        kind = rng.choice(3, p=(0.5, 0.3, 0.2))
        contrast = rng.uniform(*(WEAK_CONTRAST if rng.random() < WEAK_SHARE else STRONG_CONTRAST))
        if kind == 0 or not objects:
            # insert a new shape; small ones keep many compact change areas in play
            area = min(deficit, rng.uniform(30, max(60.0, 0.35 * target)))
            mask = _shape_mask(h, w, rng, area)
            colour = _contrasting_colour(x2[mask], rng, contrast, also=x1[mask])
            if colour is None:
                continue
            x2[mask] = colour
        else:
            mask = objects[rng.integers(len(objects))] & ~changed
            if not mask.any() or mask.sum() > 1.3 * deficit:
                continue
            if kind == 1:
                colour = _contrasting_colour(x2[mask], rng, contrast, also=x1[mask])
                if colour is None:
                    continue
                x2[mask] = colour
            else:
                visible = mask & (np.max(np.abs(bg - x2), axis=2) >= MIN_CONTRAST)
                visible &= np.max(np.abs(bg - x1), axis=2) >= MIN_CONTRAST
                x2[visible] = bg[visible]
        changed = np.any(x1 != x2, axis=2)

    ref = np.any(x1 != x2, axis=2)
    if noise_sigma > 0:
        x1 = x1 + rng.normal(0.0, noise_sigma, size=x1.shape)
        x2 = x2 + rng.normal(0.0, noise_sigma, size=x2.shape)
    return (
        RasterImage(np.clip(x1, 0.0, 1.0)),
        RasterImage(np.clip(x2, 0.0, 1.0)),
        ChangeMap(ref.astype(np.uint8)),
    )


def gen_benchmark(seed: int = 0):
    """Five 224x224 scenes at change fractions 3-20 % with noise sigma 0.05."""
    seqs = np.random.SeedSequence(seed).spawn(len(BENCHMARK_FRACTIONS))
    return [
        gen_scene(BENCHMARK_SIZE, BENCHMARK_SIZE, frac, BENCHMARK_NOISE, int(s.generate_state(1)[0]))
        for frac, s in zip(BENCHMARK_FRACTIONS, seqs)
    ]
