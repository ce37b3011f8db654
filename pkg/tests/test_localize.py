import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mitoscan.localize import (LocalizeConfig, NucleusCandidate, crop_patches,
                               extract_candidates, localization_sensitivity,
                               otsu_threshold, patch_origin)


def otsu_brute(values, bins=256, rel=1e-9):
    """All bin centers whose between-class variance ties the maximum.

    Empty bins between the modes form an exact plateau of the objective, so
    the maximizer is a set; any member is a correct threshold.
    """
    hist, edges = np.histogram(values, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    scores = np.full(bins, -np.inf)
    for i in range(bins):
        w0 = hist[: i + 1].sum()
        w1 = hist[i + 1:].sum()
        if w0 == 0 or w1 == 0:
            continue
        mu0 = (hist[: i + 1] * centers[: i + 1]).sum() / w0
        mu1 = (hist[i + 1:] * centers[i + 1:]).sum() / w1
        scores[i] = w0 * w1 * (mu0 - mu1) ** 2
    best = scores.max()
    return centers[scores >= best - rel * abs(best)]


def test_otsu_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(20):
        vals = np.concatenate([rng.normal(0.2, 0.05, 300), rng.normal(1.0, 0.1, 80)])
        vals = np.clip(vals, 0, None)
        t = otsu_threshold(vals)
        plateau = otsu_brute(vals)
        assert np.any(np.isclose(t, plateau, atol=1e-12)), (t, plateau)


def test_otsu_separates_bimodal():
    vals = np.concatenate([np.full(100, 0.1), np.full(50, 0.9)])
    t = otsu_threshold(vals)
    assert 0.1 < t < 0.9


def test_otsu_degenerate():
    assert otsu_threshold(np.array([])) == 0.0
    # all values identical: threshold sits at the lowest edge so that
    # a > comparison keeps the mass
    t = otsu_threshold(np.full(10, 0.7))
    assert np.all(np.full(10, 0.7) > t)


@settings(max_examples=50)
@given(st.lists(st.floats(0.0, 2.0), min_size=1, max_size=100))
def test_otsu_inside_range(vals):
    vals = np.asarray(vals)
    t = otsu_threshold(vals)
    if vals.max() > vals.min():
        assert vals.min() - 1e-9 <= t <= vals.max() + 1e-9
    else:
        # constant input degenerates to a below-sample threshold
        assert t < vals.min()


def _blob_map(centers, radius=6.0, size=128, value=1.0):
    hmap = np.zeros((size, size))
    yy, xx = np.mgrid[0:size, 0:size]
    for cx, cy in centers:
        hmap[(xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2] = value
    return hmap


def test_extract_candidates_finds_blobs():
    hmap = _blob_map([(30, 40), (90, 100)])
    cands = extract_candidates(hmap, LocalizeConfig())
    assert len(cands) == 2
    # sorted by (cy, cx)
    assert cands[0].cy < cands[1].cy
    assert cands[0].cx == pytest.approx(30, abs=1.0)
    assert cands[0].cy == pytest.approx(40, abs=1.0)
    assert cands[1].cx == pytest.approx(90, abs=1.0)
    assert all(c.area > 0 and c.mean_od > 0 for c in cands)


def test_extract_candidates_area_filter():
    hmap = _blob_map([(30, 30)], radius=2.0)  # ~13 px, below min_area=30
    assert extract_candidates(hmap, LocalizeConfig()) == []
    big = _blob_map([(64, 64)], radius=40.0)  # ~5000 px, above max_area
    assert extract_candidates(big, LocalizeConfig()) == []


def test_extract_candidates_empty_map():
    assert extract_candidates(np.zeros((64, 64)), LocalizeConfig()) == []


def test_extract_candidates_fixed_threshold():
    hmap = _blob_map([(30, 30)], value=0.5)
    cfg = LocalizeConfig(threshold_method="fixed", fixed_threshold=0.4)
    assert len(extract_candidates(hmap, cfg)) == 1
    cfg_hi = LocalizeConfig(threshold_method="fixed", fixed_threshold=0.6)
    assert extract_candidates(hmap, cfg_hi) == []


def test_extract_candidates_validation():
    with pytest.raises(ValueError, match="2-D"):
        extract_candidates(np.zeros((4, 4, 3)), LocalizeConfig())
    with pytest.raises(ValueError, match="non-negative"):
        extract_candidates(np.full((8, 8), -1.0), LocalizeConfig())


def test_localize_config_validation():
    with pytest.raises(ValueError, match="threshold_method"):
        LocalizeConfig(threshold_method="mean")
    with pytest.raises(ValueError, match="min_area"):
        LocalizeConfig(min_area=100, max_area=50)


def test_patch_origin_rounding():
    c = NucleusCandidate(cx=10.6, cy=20.4, area=50, mean_od=1.0)
    assert patch_origin(c, 80) == (11 - 40, 20 - 40)
    c2 = NucleusCandidate(cx=10.5, cy=20.5, area=50, mean_od=1.0)
    assert patch_origin(c2, 80) == (11 - 40, 21 - 40)


def test_crop_patches_shape_and_reflection():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 255, size=(100, 100, 3), dtype=np.uint8)
    cands = [NucleusCandidate(cx=2.0, cy=3.0, area=40, mean_od=1.0),
             NucleusCandidate(cx=50.0, cy=50.0, area=40, mean_od=1.0)]
    patches = crop_patches(img, cands, 32, image_id="im")
    assert all(p.pixels.shape == (32, 32, 3) for p in patches)
    assert patches[0].source_image_id == "im"
    assert patches[0].center == (2.0, 3.0)
    # interior crop is a plain slice of the image
    x0, y0 = patch_origin(cands[1], 32)
    assert np.array_equal(patches[1].pixels, img[y0:y0 + 32, x0:x0 + 32])


def test_crop_patches_size_validation():
    img = np.zeros((50, 50, 3), dtype=np.uint8)
    c = [NucleusCandidate(cx=25.0, cy=25.0, area=40, mean_od=1.0)]
    with pytest.raises(ValueError, match="even"):
        crop_patches(img, c, 33)
    with pytest.raises(ValueError, match="even"):
        crop_patches(img, c, 8)
    assert crop_patches(img, [], 32) == []


def _cand(x, y):
    return NucleusCandidate(cx=x, cy=y, area=40, mean_od=1.0)


def test_localization_sensitivity():
    cands = [_cand(10, 10), _cand(50, 50)]
    gt = [(11.0, 11.0), (80.0, 80.0)]
    assert localization_sensitivity(cands, gt, radius=5.0) == 0.5
    assert localization_sensitivity(cands, [], radius=5.0) == 1.0
    assert localization_sensitivity([], gt, radius=5.0) == 0.0
    with pytest.raises(ValueError, match="radius"):
        localization_sensitivity(cands, gt, radius=0.0)
