import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from mitoscan.evaluation import match_detections
from mitoscan.pipeline import (
    HISTORY_COLUMNS,
    detect,
    detect_all,
    evaluate_detections,
    load_detections,
    read_manifest,
    save_detections,
    select_from_manifest,
    split_ids,
    write_history_csv,
    write_manifest,
)


def test_detect_schema_and_bounds(trained_small, small_cfg, detect_fixture):
    img, _ = detect_fixture
    dets = detect(img, trained_small.model, small_cfg, image_id="img_000")
    assert dets, "fixture image should yield detections"
    h, w = img.shape[:2]
    for d in dets:
        assert set(d) == {"x", "y", "score"}
        assert 0 <= d["x"] <= w - 1
        assert 0 <= d["y"] <= h - 1
        assert d["score"] >= small_cfg.pipeline.score_threshold


def test_detect_finds_planted_mitoses(trained_small, small_cfg, detect_fixture):
    img, annots = detect_fixture
    dets = detect(img, trained_small.model, small_cfg, image_id="img_000")
    gt = [(p.x, p.y) for p in annots.points_for("img_000", "mitosis")]
    r = small_cfg.pipeline.match_radius
    covered = sum(1 for gx, gy in gt
                  if any(math.hypot(d["x"] - gx, d["y"] - gy) <= r for d in dets))
    assert covered >= 3, (covered, len(gt), len(dets))
    # not a spray: detections stay within a small multiple of the truth
    assert len(dets) <= 3 * len(gt)


def test_detect_deterministic(trained_small, small_cfg, detect_fixture):
    img, _ = detect_fixture
    a = detect(img, trained_small.model, small_cfg)
    b = detect(img, trained_small.model, small_cfg)
    assert a == b


def test_detect_blank_image(trained_small, small_cfg):
    blank = np.full((128, 128, 3), 240, dtype=np.uint8)
    assert detect(blank, trained_small.model, small_cfg) == []


def test_threshold_monotone_fp(trained_small, small_cfg, detect_fixture):
    img, annots = detect_fixture
    gt = [(p.x, p.y) for p in annots.points_for("img_000", "mitosis")]
    r = small_cfg.pipeline.match_radius
    prev_fp = None
    for thr in (0.0, 0.25, 0.5, 0.75, 0.9):
        cfg = replace(small_cfg, pipeline=replace(small_cfg.pipeline,
                                                  score_threshold=thr))
        dets = detect(img, trained_small.model, cfg)
        rep = match_detections([(d["x"], d["y"]) for d in dets], gt, r)
        if prev_fp is not None:
            assert rep.fp <= prev_fp
        prev_fp = rep.fp


def test_evaluate_detections_perfect_on_gt(small_synth, small_cfg):
    _, annots = small_synth
    fake = {info.id: [{"x": p.x, "y": p.y, "score": 1.0}
                      for p in annots.points_for(info.id, "mitosis")]
            for info in annots.images}
    metrics = evaluate_detections(fake, annots, small_cfg.pipeline.match_radius)
    assert metrics["precision"] == metrics["recall"] == metrics["f1"] == 1.0
    assert metrics["fp"] == metrics["fn"] == 0
    assert metrics["tp"] == sum(1 for p in annots.points if p.label == "mitosis")


def test_evaluate_detections_empty(small_synth, small_cfg):
    _, annots = small_synth
    empty = {info.id: [] for info in annots.images}
    metrics = evaluate_detections(empty, annots, 30.0)
    assert metrics["tp"] == 0 and metrics["fp"] == 0
    assert metrics["recall"] == 0.0 and metrics["f1"] == 0.0


def test_detect_all_orders_ids(small_synth, trained_small, small_cfg):
    images, _ = small_synth
    subset = ["img_009", "img_007"]
    out = detect_all(images, trained_small.model, small_cfg, image_ids=subset)
    assert list(out) == subset
    full = detect_all({k: images[k] for k in subset}, trained_small.model, small_cfg)
    assert list(full) == sorted(subset)


def test_split_ids(small_synth):
    _, annots = small_synth
    train_ids, test_ids = split_ids(annots, 7)
    assert len(train_ids) == 7 and len(test_ids) == 3
    assert train_ids + test_ids == [im.id for im in annots.images]
    all_train, none = split_ids(annots, 99)
    assert len(all_train) == 10 and none == []


def test_detections_roundtrip(tmp_path):
    dets = {"img_000": [{"x": 1.5, "y": 2.0, "score": 0.75}], "img_001": []}
    p = tmp_path / "dets.json"
    save_detections(p, dets)
    data = json.loads(p.read_text())
    assert set(data) == {"detections"}
    assert load_detections(p) == dets


def test_history_csv(tmp_path, trained_small):
    p = tmp_path / "history.csv"
    write_history_csv(p, trained_small.history)
    with open(p) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == HISTORY_COLUMNS
    assert len(rows) == len(trained_small.history)
    # parent-phase rows leave child columns blank
    assert rows[0]["L_focal_c"] == ""
    assert rows[-1]["L_focal_c"] != ""
    assert float(rows[0]["total"]) == pytest.approx(trained_small.history[0]["total"])


def test_manifest_roundtrip(tmp_path, small_dataset, trained_small):
    p = tmp_path / "manifest.json"
    write_manifest(p, small_dataset, trained_small.selected_ids,
                   trained_small.cluster_of)
    rows = read_manifest(p)
    assert [r["patch_id"] for r in rows] == trained_small.selected_ids
    assert all(set(r) == {"patch_id", "parent_label", "cluster"} for r in rows)
    picked = select_from_manifest(small_dataset, rows)
    assert picked.ids == trained_small.selected_ids
    by_id = dict(zip(small_dataset.ids, small_dataset.labels))
    assert [by_id[i] for i in picked.ids] == list(picked.labels)
    assert all(r["parent_label"] == by_id[r["patch_id"]] for r in rows)


def test_manifest_unknown_patch(small_dataset):
    rows = [{"patch_id": "ghost:0", "parent_label": 0, "cluster": None}]
    with pytest.raises(ValueError, match="unknown patches"):
        select_from_manifest(small_dataset, rows)
