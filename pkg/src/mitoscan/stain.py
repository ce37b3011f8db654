"""Optical-density math and H&E stain separation.

Stains mix linearly in optical-density (OD) space, so an RGB image can be
decomposed into per-stain concentration maps given a basis of absorbance
vectors, edited there, and recombined. OD is base-10 against a white point
of 255 with intensities clamped to 1, which makes the transform bijective
on [1, 255].
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Hematoxylin / eosin absorbance vectors from the classic color-deconvolution
# tables; rows are normalized to unit length on construction.
DEFAULT_HEMATOXYLIN = (0.650, 0.704, 0.286)
DEFAULT_EOSIN = (0.072, 0.990, 0.105)

WHITE_POINT = 255.0
MAX_CONDITION = 1e6


class StainEstimationError(ValueError):
    """Raised when a stain basis cannot be estimated from an image."""


@dataclass(frozen=True)
class StainMatrix:
    """3x3 basis of absorbance vectors: rows = hematoxylin, eosin, residual.

    Rows must be unit-norm and the matrix invertible (condition number
    below 1e6); both are checked at construction.
    """

    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.shape != (3, 3):
            raise ValueError(f"stain matrix must be 3x3, got {rows.shape}")
        norms = np.linalg.norm(rows, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError(f"stain rows must be unit-norm, got norms {norms}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("stain matrix must be finite")
        if np.linalg.cond(rows) >= MAX_CONDITION:
            raise ValueError("stain matrix is singular or near-singular")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_vectors(cls, hematoxylin, eosin) -> "StainMatrix":
        """Build a matrix from H and E absorbance vectors.

        Vectors are normalized to unit length; the residual row is the
        normalized cross product of the two.
        """
        h = np.asarray(hematoxylin, dtype=np.float64)
        e = np.asarray(eosin, dtype=np.float64)
        h = h / np.linalg.norm(h)
        e = e / np.linalg.norm(e)
        r = np.cross(h, e)
        r_norm = np.linalg.norm(r)
        if r_norm < 1e-12:
            raise ValueError("hematoxylin and eosin vectors are collinear")
        return cls(rows=np.stack([h, e, r / r_norm]))

    @classmethod
    def default(cls) -> "StainMatrix":
        return cls.from_vectors(DEFAULT_HEMATOXYLIN, DEFAULT_EOSIN)

    @property
    def hematoxylin(self) -> np.ndarray:
        return self.rows[0]

    @property
    def eosin(self) -> np.ndarray:
        return self.rows[1]

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.rows)

    def flat(self) -> list[float]:
        """Row-major 9-number form used in config files."""
        return [float(v) for v in self.rows.reshape(-1)]


def rgb_to_od(img: np.ndarray) -> np.ndarray:
    """Convert intensities in [0, 255] to optical densities.

    od = -log10(max(I, 1) / 255), elementwise. Zero intensity is clamped
    to 1 so the result stays finite.
    """
    img = np.asarray(img, dtype=np.float64)
    return -np.log10(np.maximum(img, 1.0) / WHITE_POINT)


def od_to_rgb(od: np.ndarray) -> np.ndarray:
    """Invert :func:`rgb_to_od`: I = round(255 * 10**(-od)), clamped to [0, 255]."""
    od = np.asarray(od, dtype=np.float64)
    intensities = np.round(WHITE_POINT * np.power(10.0, -od))
    return np.clip(intensities, 0, 255).astype(np.uint8)


def deconvolve(od: np.ndarray, m: StainMatrix) -> np.ndarray:
    """Solve per-pixel stain concentrations c from c @ M = od.

    Returns an array shaped like ``od`` with channel 0 = hematoxylin,
    1 = eosin, 2 = residual.
    """
    od = np.asarray(od, dtype=np.float64)
    return od @ m.inverse()


def recombine(conc: np.ndarray, m: StainMatrix) -> np.ndarray:
    """Map concentrations back to OD: od = c @ M. Negativity is not clamped here."""
    conc = np.asarray(conc, dtype=np.float64)
    if conc.shape[-1] != 3:
        raise ValueError(f"expected 3 concentration channels, got {conc.shape}")
    return conc @ m.rows


def hematoxylin_channel(img: np.ndarray, m: StainMatrix) -> np.ndarray:
    """Extract the hematoxylin concentration map of an RGB image.

    Negative concentrations (deconvolution noise) are clamped to 0.
    """
    conc = deconvolve(rgb_to_od(img), m)
    return np.maximum(conc[..., 0], 0.0)


def estimate_stain_matrix(
    img: np.ndarray,
    od_floor: float = 0.15,
    percentile: float = 1.0,
    min_stained_pixels: int = 100,
    rank_tol: float = 0.01,
) -> StainMatrix:
    """Estimate the H and E absorbance vectors of an image.

    High-OD pixels are projected onto their 2-D principal plane; the
    angular extremes (``percentile`` / ``100 - percentile``) give the two
    stain directions. The row closer to the reference hematoxylin vector
    becomes the H row.

    Raises:
        StainEstimationError: "insufficient tissue" when fewer than
            ``min_stained_pixels`` pixels exceed ``od_floor``; "single
            stain" when the OD cloud is rank-deficient.
    """
    od = rgb_to_od(img).reshape(-1, 3)
    magnitudes = np.linalg.norm(od, axis=1)
    stained = od[magnitudes > od_floor]
    if stained.shape[0] < min_stained_pixels:
        raise StainEstimationError("insufficient tissue")

    # Principal plane of the (uncentered) OD cloud; stains span a plane
    # through the origin.
    _, svals, vt = np.linalg.svd(stained, full_matrices=False)
    if svals[1] / svals[0] < rank_tol:
        raise StainEstimationError("single stain")
    plane = vt[:2]
    # Orient the first axis toward the cloud so angles are contiguous.
    proj = stained @ plane.T
    if proj[:, 0].mean() < 0:
        plane = -plane
        proj = -proj

    angles = np.arctan2(proj[:, 1], proj[:, 0])
    lo = np.percentile(angles, percentile)
    hi = np.percentile(angles, 100.0 - percentile)
    v_lo = np.cos(lo) * plane[0] + np.sin(lo) * plane[1]
    v_hi = np.cos(hi) * plane[0] + np.sin(hi) * plane[1]
    # Absorbance vectors live in the positive octant.
    if v_lo.sum() < 0:
        v_lo = -v_lo
    if v_hi.sum() < 0:
        v_hi = -v_hi

    reference_h = np.asarray(DEFAULT_HEMATOXYLIN) / np.linalg.norm(DEFAULT_HEMATOXYLIN)
    if np.dot(v_lo, reference_h) >= np.dot(v_hi, reference_h):
        h_vec, e_vec = v_lo, v_hi
    else:
        h_vec, e_vec = v_hi, v_lo
    return StainMatrix.from_vectors(h_vec, e_vec)


def restain(
    img: np.ndarray,
    src: StainMatrix,
    tgt: StainMatrix,
    gain=(1.0, 1.0, 1.0),
) -> np.ndarray:
    """Re-express an image in a different stain basis.

    Deconvolves with ``src``, scales concentrations elementwise by
    ``gain``, and recombines with ``tgt``. The concentration map (up to
    gain) is unchanged, so structural content is preserved.
    """
    conc = deconvolve(rgb_to_od(img), src)
    conc = conc * np.asarray(gain, dtype=np.float64)
    return od_to_rgb(recombine(conc, tgt))


def hed_jitter(
    img: np.ndarray,
    m: StainMatrix,
    scale=(1.0, 1.0, 1.0),
    shift=(0.0, 0.0, 0.0),
    seed: int = 0,
) -> np.ndarray:
    """Perturb per-stain concentrations: c' = c * scale + shift.

    Each entry of ``scale`` / ``shift`` may be a number (applied as-is) or
    a ``(low, high)`` pair sampled uniformly, deterministically for a
    given ``seed``.
    """
    rng = np.random.default_rng(seed)
    scale_v = _resolve_jitter(scale, rng)
    shift_v = _resolve_jitter(shift, rng)
    conc = deconvolve(rgb_to_od(img), m)
    conc = conc * scale_v + shift_v
    return od_to_rgb(recombine(conc, m))


def _resolve_jitter(entries, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(3, dtype=np.float64)
    for i, entry in enumerate(entries):
        if np.isscalar(entry):
            out[i] = float(entry)
        else:
            lo, hi = entry
            out[i] = rng.uniform(lo, hi)
    return out
