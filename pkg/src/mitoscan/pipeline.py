"""End-to-end inference and evaluation: detect, score, ablate."""
from __future__ import annotations

import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .annotations import AnnotationSet
from .config import Config
from .evaluation import MatchReport, match_detections, prf1
from .localize import extract_candidates, crop_patches, patch_origin
from .model import PatchClassifier, cam, patches_to_tensor, pool_features
from .stain import hematoxylin_channel
from .training import PatchDataset, assemble_dataset, train


def detect(img: np.ndarray, model: PatchClassifier, cfg: Config,
           image_id: str = "") -> list[dict]:
    """Localize, classify, and point-localize mitoses on one image.

    Candidates scoring at or above the threshold emit one point at the
    positive-class CAM argmax, mapped back into image coordinates.
    """
    m = cfg.stain.matrix()
    size = cfg.pipeline.patch_size
    cands = extract_candidates(hematoxylin_channel(img, m), cfg.localize)
    if not cands:
        return []
    patches = crop_patches(img, cands, size, image_id=image_id)

    model.eval()
    h_img, w_img = img.shape[:2]
    out: list[dict] = []
    with torch.no_grad():
        x = patches_to_tensor([p.pixels for p in patches])
        maps = model.backbone(x)
        pooled = pool_features(maps)
        probs = torch.softmax(model.parent_head(pooled), dim=1)[:, 1].numpy()
        pos_weights = model.parent_head.weight[1].numpy()

    for cand, prob, fmap in zip(cands, probs, maps.numpy()):
        if prob < cfg.pipeline.score_threshold:
            continue
        res = cam(fmap, pos_weights, patch_size=size)
        x0, y0 = patch_origin(cand, size)
        px, py = res.point
        out.append({
            "x": float(np.clip(x0 + px, 0, w_img - 1)),
            "y": float(np.clip(y0 + py, 0, h_img - 1)),
            "score": float(prob),
        })
    return out


def detect_all(images: dict[str, np.ndarray], model: PatchClassifier,
               cfg: Config, image_ids=None) -> dict[str, list[dict]]:
    ids = list(image_ids) if image_ids is not None else sorted(images)
    return {i: detect(images[i], model, cfg, image_id=i) for i in ids}


def evaluate_detections(detections: dict[str, list[dict]], annots: AnnotationSet,
                        radius: float) -> dict:
    """Greedy-match detections to mitosis ground truth, summed over images."""
    total = MatchReport(0, 0, 0)
    for image_id, dets in detections.items():
        pred = [(d["x"], d["y"]) for d in dets]
        gt = [(p.x, p.y) for p in annots.points_for(image_id, label="mitosis")]
        total = total + match_detections(pred, gt, radius)
    metrics = prf1(total)
    metrics.update(tp=total.tp, fp=total.fp, fn=total.fn)
    return metrics


def split_ids(annots: AnnotationSet, train_images: int) -> tuple[list[str], list[str]]:
    ids = [im.id for im in annots.images]
    return ids[:train_images], ids[train_images:]


def run_ablation(images: dict[str, np.ndarray], annots: AnnotationSet,
                 variants: list[dict], cfg: Config, seed: int) -> list[dict]:
    """Train and evaluate one model per flag combination, shared seed.

    Each variant is a dict with any of the keys dgsb/se/incdp; missing keys
    fall back to the base config. Returns one row per variant with the
    flags and the test-split metrics.
    """
    if not variants:
        raise ValueError("need at least one variant")
    train_ids, test_ids = split_ids(annots, cfg.pipeline.train_images)
    train_imgs = {i: images[i] for i in train_ids if i in images}
    dataset = assemble_dataset(train_imgs, annots, cfg)

    rows = []
    for flags in variants:
        cfg_v = replace(cfg, pipeline=replace(cfg.pipeline, **{
            k: bool(flags.get(k, getattr(cfg.pipeline, k)))
            for k in ("dgsb", "se", "incdp")}))
        result = train(dataset, cfg_v, seed)
        detections = detect_all(images, result.model, cfg_v, image_ids=test_ids)
        metrics = evaluate_detections(detections, annots, cfg_v.pipeline.match_radius)
        rows.append({"dgsb": cfg_v.pipeline.dgsb, "se": cfg_v.pipeline.se,
                     "incdp": cfg_v.pipeline.incdp, **metrics})
    return rows


HISTORY_COLUMNS = ["epoch", "L_focal_p", "L_center_p", "L_focal_c", "L_center_c", "total"]


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS, restval="")
        writer.writeheader()
        for row in history:
            writer.writerow(row)


def write_manifest(path, dataset: PatchDataset, selected_ids: list[str],
                   cluster_of: dict[str, int]) -> None:
    """Balanced-dataset manifest: the patches the sampler kept, with clusters."""
    by_id = {pid: int(lab) for pid, lab in zip(dataset.ids, dataset.labels)}
    rows = [{"patch_id": pid, "parent_label": by_id[pid],
             "cluster": cluster_of.get(pid)} for pid in selected_ids]
    Path(path).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    return json.loads(Path(path).read_text())


def select_from_manifest(dataset: PatchDataset, manifest: list[dict]) -> PatchDataset:
    index = {pid: i for i, pid in enumerate(dataset.ids)}
    missing = [row["patch_id"] for row in manifest if row["patch_id"] not in index]
    if missing:
        raise ValueError(f"manifest references unknown patches: {missing[:5]}")
    picked = [index[row["patch_id"]] for row in manifest]
    return PatchDataset(
        patches=[dataset.patches[i] for i in picked],
        labels=dataset.labels[picked],
        ids=[dataset.ids[i] for i in picked],
    )


def save_detections(path, detections: dict[str, list[dict]]) -> None:
    Path(path).write_text(json.dumps({"detections": detections}, indent=2,
                                     sort_keys=True) + "\n")


def load_detections(path) -> dict[str, list[dict]]:
    return json.loads(Path(path).read_text())["detections"]
