"""Candidate nuclei extraction from the hematoxylin channel.

Thresholds the hematoxylin concentration map, cleans the mask with a
morphological opening, and returns connected-component centroids filtered
by area. No training involved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class LocalizeConfig:
    threshold_method: str = "otsu"  # otsu | fixed
    fixed_threshold: float = 0.3
    min_area: int = 30
    max_area: int = 3000
    open_radius: int = 1

    def __post_init__(self):
        if self.threshold_method not in ("otsu", "fixed"):
            raise ValueError(f"unknown threshold_method {self.threshold_method!r}")
        if not 0 < self.min_area < self.max_area:
            raise ValueError("need 0 < min_area < max_area")


@dataclass(frozen=True)
class NucleusCandidate:
    cx: float
    cy: float
    area: int
    mean_od: float


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray
    source_image_id: str
    center: tuple[float, float]


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Otsu's threshold over a 1-D sample of positive values.

    Returns the histogram bin center maximizing between-class variance;
    degenerate (single-bin) inputs return the lowest bin edge so that a
    ``> threshold`` binarization keeps the mass.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    hist, edges = np.histogram(values, bins=bins)
    hist = hist.astype(np.float64)
    total = hist.sum()
    if total == 0:
        return 0.0
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)
    w1 = total - w0
    cum = np.cumsum(hist * centers)
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return float(edges[0])
    mu0 = np.where(w0 > 0, cum / np.maximum(w0, 1), 0.0)
    mu1 = np.where(w1 > 0, (cum[-1] - cum) / np.maximum(w1, 1), 0.0)
    between = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -1.0)
    return float(centers[int(np.argmax(between))])


def _disk(radius: int) -> np.ndarray:
    r = int(radius)
    y, x = np.ogrid[-r : r + 1, -r : r + 1]
    return (x * x + y * y) <= r * r


def extract_candidates(hmap: np.ndarray, cfg: LocalizeConfig) -> list[NucleusCandidate]:
    """Detect nucleus-like blobs on a hematoxylin concentration map.

    Binarization uses Otsu over the nonzero values (or a fixed threshold),
    followed by an opening with a disk of ``open_radius`` and 8-connected
    labeling. Components with area outside [min_area, max_area] are
    dropped. Candidates come back sorted by (cy, cx).
    """
    hmap = np.asarray(hmap, dtype=np.float64)
    if hmap.ndim != 2:
        raise ValueError("hematoxylin map must be 2-D")
    if np.any(hmap < 0):
        raise ValueError("hematoxylin map must be non-negative")

    if cfg.threshold_method == "fixed":
        thr = cfg.fixed_threshold
    else:
        nonzero = hmap[hmap > 0]
        if nonzero.size == 0:
            return []
        thr = otsu_threshold(nonzero)
    mask = hmap > thr
    if not mask.any():
        return []

    if cfg.open_radius > 0:
        mask = ndimage.binary_opening(mask, structure=_disk(cfg.open_radius))
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return []

    areas = np.bincount(labels.ravel())[1:]
    keep = [i + 1 for i, a in enumerate(areas) if cfg.min_area <= a <= cfg.max_area]
    if not keep:
        return []
    centroids = ndimage.center_of_mass(mask, labels, keep)
    means = ndimage.mean(hmap, labels, keep)

    cands = [
        NucleusCandidate(cx=float(cx), cy=float(cy), area=int(areas[i - 1]), mean_od=float(m))
        for i, (cy, cx), m in zip(keep, centroids, np.atleast_1d(means))
    ]
    cands.sort(key=lambda c: (c.cy, c.cx))
    return cands


def patch_origin(cand: NucleusCandidate, size: int) -> tuple[int, int]:
    """Top-left corner (x0, y0) of the size x size crop centered on a candidate."""
    half = size // 2
    px = int(math.floor(cand.cx + 0.5))
    py = int(math.floor(cand.cy + 0.5))
    return px - half, py - half


def crop_patches(
    img: np.ndarray, cands: list[NucleusCandidate], size: int, image_id: str = ""
) -> list[Patch]:
    """Cut size x size crops centered on candidates, reflect-padding at borders."""
    if size % 2 != 0 or size < 16:
        raise ValueError("patch size must be even and >= 16")
    if not cands:
        return []
    half = size // 2
    padded = np.pad(img, ((half, half), (half, half), (0, 0)), mode="reflect")
    out = []
    for cand in cands:
        x0, y0 = patch_origin(cand, size)
        crop = padded[y0 + half : y0 + half + size, x0 + half : x0 + half + size]
        out.append(Patch(pixels=np.ascontiguousarray(crop), source_image_id=image_id,
                         center=(cand.cx, cand.cy)))
    return out


def localization_sensitivity(
    cands: list[NucleusCandidate], gt: list[tuple[float, float]], radius: float
) -> float:
    """Fraction of ground-truth points with a candidate within ``radius``.

    Empty ground truth counts as fully covered (1.0).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if not gt:
        return 1.0
    if not cands:
        return 0.0
    cxy = np.array([(c.cx, c.cy) for c in cands], dtype=np.float64)
    hit = 0
    for gx, gy in gt:
        d = np.hypot(cxy[:, 0] - gx, cxy[:, 1] - gy)
        if float(d.min()) <= radius:
            hit += 1
    return hit / len(gt)
