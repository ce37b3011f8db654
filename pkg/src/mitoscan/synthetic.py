"""Deterministic synthetic H&E-like image generator.

Images are composed in stain-concentration space (hematoxylin + eosin
channels) and mapped to RGB through the same recombination math the
pipeline inverts, so deconvolution assumptions hold exactly up to
rounding. Three object kinds are planted:

- normal nuclei: light elliptical hematoxylin blobs,
- mitoses: dense two-lobed shapes with short spikes (the positives),
- impostors: small dense blobs or fragment clusters that mimic mitoses.

Ground truth is one point per object. Mitoses are labeled ``mitosis``;
nuclei and impostors are both ``hard_negative`` with a ``kind`` tag to
tell them apart.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .annotations import AnnotationPoint, AnnotationSet, ImageInfo, load_annotations, save_annotations
from .stain import StainMatrix, od_to_rgb, recombine


class PackingError(RuntimeError):
    """Shapes cannot be placed with the requested separation."""


@dataclass(frozen=True)
class SyntheticConfig:
    images: int = 40
    size: int = 256
    nuclei: int = 20
    mitoses: int = 5
    impostors: int = 5
    radius_min: float = 5.0
    radius_max: float = 9.0
    min_sep: float = 24.0
    low_intensity_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.images, self.nuclei, self.mitoses, self.impostors) < 0:
            raise ValueError("counts must be non-negative")
        if not 0 < self.radius_min <= self.radius_max:
            raise ValueError("need 0 < radius_min <= radius_max")
        if not 0.0 <= self.low_intensity_fraction <= 1.0:
            raise ValueError("low_intensity_fraction must lie in [0, 1]")


MAX_PLACEMENT_ATTEMPTS = 10_000


def generate_synthetic(cfg: SyntheticConfig,
                       stain_matrix: StainMatrix | None = None
                       ) -> tuple[list[np.ndarray], AnnotationSet]:
    """Render ``cfg.images`` images plus their annotation set, seed-determined."""
    m = stain_matrix or StainMatrix.default()
    children = np.random.SeedSequence(cfg.seed).spawn(max(cfg.images, 1))
    images: list[np.ndarray] = []
    infos: list[ImageInfo] = []
    points: list[AnnotationPoint] = []
    for i in range(cfg.images):
        rng = np.random.default_rng(children[i])
        img, img_points = _render_image(cfg, rng, m)
        image_id = f"img_{i:03d}"
        images.append(img)
        infos.append(ImageInfo(id=image_id, file=f"{image_id}.png",
                               width=cfg.size, height=cfg.size))
        for x, y, label, kind in img_points:
            points.append(AnnotationPoint(image_id=image_id, x=x, y=y,
                                          label=label, kind=kind))
    return images, AnnotationSet(images=infos, points=points).validate()


def _render_image(cfg: SyntheticConfig, rng: np.random.Generator,
                  m: StainMatrix) -> tuple[np.ndarray, list]:
    s = cfg.size
    hema = np.maximum(0.01 + 0.004 * _smooth_noise(rng, s, sigma=8.0), 0.0)
    eosin = np.maximum(0.15 + 0.03 * _smooth_noise(rng, s, sigma=8.0), 0.0)

    kinds = (["mitosis"] * cfg.mitoses + ["impostor"] * cfg.impostors
             + ["nucleus"] * cfg.nuclei)
    margin = 1.2 * cfg.radius_max + 3.0
    if s <= 2 * margin and kinds:
        raise PackingError(f"image size {s} too small for shape margin {margin:.1f}")
    centers = _place(kinds, cfg, rng, margin)

    n_low = int(round(cfg.low_intensity_fraction * cfg.mitoses))
    fore = np.zeros((s, s), dtype=np.float64)
    img_points = []
    mitosis_seen = 0
    for kind, (x, y) in zip(kinds, centers):
        if kind == "mitosis":
            low = mitosis_seen < n_low
            mitosis_seen += 1
            _draw_mitosis(fore, x, y, rng, cfg, low=low)
            img_points.append((x, y, "mitosis", "mitosis_low" if low else "mitosis"))
        elif kind == "impostor":
            tag = _draw_impostor(fore, x, y, rng)
            img_points.append((x, y, "hard_negative", tag))
        else:
            _draw_nucleus(fore, x, y, rng, cfg)
            img_points.append((x, y, "hard_negative", "nucleus"))

    hema = np.maximum(hema, ndimage.gaussian_filter(fore, 0.7))
    conc = np.stack([hema, eosin, np.zeros_like(hema)], axis=-1)
    return od_to_rgb(recombine(conc, m)), img_points


def _place(kinds: list[str], cfg: SyntheticConfig, rng: np.random.Generator,
           margin: float) -> list[tuple[float, float]]:
    centers: list[tuple[float, float]] = []
    budget = MAX_PLACEMENT_ATTEMPTS
    for _ in kinds:
        while True:
            if budget <= 0:
                raise PackingError(
                    f"could not place {len(kinds)} shapes with min_sep {cfg.min_sep}"
                    f" in a {cfg.size}x{cfg.size} image")
            budget -= 1
            x = rng.uniform(margin, cfg.size - margin)
            y = rng.uniform(margin, cfg.size - margin)
            if all(math.hypot(x - cx, y - cy) >= cfg.min_sep for cx, cy in centers):
                centers.append((x, y))
                break
    return centers


def _smooth_noise(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    noise = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma)
    std = noise.std()
    return noise / std if std > 0 else noise


def _paint_disk(canvas: np.ndarray, cx: float, cy: float, r: float, value: float) -> None:
    s = canvas.shape[0]
    x0, x1 = max(int(cx - r) - 1, 0), min(int(cx + r) + 2, s)
    y0, y1 = max(int(cy - r) - 1, 0), min(int(cy + r) + 2, s)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    region = canvas[y0:y1, x0:x1]
    region[mask] = np.maximum(region[mask], value)


def _paint_ellipse(canvas: np.ndarray, cx: float, cy: float, a: float, b: float,
                   theta: float, value: float) -> None:
    s = canvas.shape[0]
    r = max(a, b)
    x0, x1 = max(int(cx - r) - 1, 0), min(int(cx + r) + 2, s)
    y0, y1 = max(int(cy - r) - 1, 0), min(int(cy + r) + 2, s)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx, dy = xx - cx, yy - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    region = canvas[y0:y1, x0:x1]
    region[mask] = np.maximum(region[mask], value)


def _paint_capsule(canvas: np.ndarray, x0: float, y0: float, x1: float, y1: float,
                   r: float, value: float) -> None:
    length = math.hypot(x1 - x0, y1 - y0)
    steps = max(int(length / 0.5), 1)
    for t in np.linspace(0.0, 1.0, steps + 1):
        _paint_disk(canvas, x0 + t * (x1 - x0), y0 + t * (y1 - y0), r, value)


def _draw_nucleus(fore, x, y, rng, cfg) -> None:
    # density range overlaps the impostor/mitosis ranges on purpose: if plain
    # nuclei were uniformly fainter, intensity alone would separate the
    # classes and hard-negative mining would have nothing to do
    a = rng.uniform(cfg.radius_min, cfg.radius_max)
    b = a * rng.uniform(0.55, 0.85)
    theta = rng.uniform(0.0, math.pi)
    density = rng.uniform(0.5, 0.85)
    _paint_ellipse(fore, x, y, a, b, theta, density)


def _draw_mitosis(fore, x, y, rng, cfg, low: bool = False) -> None:
    r = rng.uniform(cfg.radius_min, cfg.radius_max)
    theta = rng.uniform(0.0, math.pi)
    dx, dy = 0.5 * r * math.cos(theta), 0.5 * r * math.sin(theta)
    density = rng.uniform(0.08, 0.14) if low else rng.uniform(0.85, 1.1)
    for sx, sy in ((x - dx, y - dy), (x + dx, y + dy)):
        _paint_disk(fore, sx, sy, rng.uniform(0.55, 0.68) * r, density)
    _paint_capsule(fore, x - dx, y - dy, x + dx, y + dy, 1.8, density)
    for _ in range(rng.integers(4, 7)):
        ang = rng.uniform(0.0, 2.0 * math.pi)
        inner, outer = 0.5 * r, rng.uniform(0.95, 1.15) * r
        _paint_capsule(fore, x + inner * math.cos(ang), y + inner * math.sin(ang),
                       x + outer * math.cos(ang), y + outer * math.sin(ang), 1.0, density)


def _draw_impostor(fore, x, y, rng) -> str:
    density = rng.uniform(0.8, 1.05)
    if rng.random() < 0.5:
        _paint_disk(fore, x, y, rng.uniform(3.6, 5.0), density)
        return "impostor_blob"
    for _ in range(int(rng.integers(2, 4))):
        ang = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(2.2, 3.4)
        _paint_disk(fore, x + dist * math.cos(ang), y + dist * math.sin(ang),
                    rng.uniform(2.6, 3.2), density)
    return "impostor_fragments"


def write_dataset(out_dir, images: list[np.ndarray], annots: AnnotationSet) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for info, img in zip(annots.images, images):
        Image.fromarray(img).save(out / info.file)
    save_annotations(out / "annotations.json", annots)


def read_dataset(data_dir) -> tuple[dict[str, np.ndarray], AnnotationSet]:
    data = Path(data_dir)
    annots = load_annotations(data / "annotations.json")
    images = {info.id: np.asarray(Image.open(data / info.file).convert("RGB"))
              for info in annots.images}
    return images, annots
