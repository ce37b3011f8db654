"""Batch command-line interface.

Subcommands cover the whole pipeline: synth, localize, build, train,
detect, eval, ablate, plot-features. Every command takes --config and
--seed. Exit codes: 0 success, 2 usage error, 1 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline
from .balancing import DefaultPatchEmbedder, embed
from .config import load_config
from .localize import extract_candidates
from .model import load_checkpoint, save_checkpoint
from .stain import hematoxylin_channel
from .synthetic import generate_synthetic, read_dataset, write_dataset
from .training import assemble_dataset, dgsb_select, train

log = logging.getLogger("mitoscan")

FLAG_NAMES = ("dgsb", "se", "incdp")


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None, help="key=value config file")
    sub.add_argument("--seed", type=int, default=None,
                     help="base random seed (default 0; synth falls back to synth.seed)")


def _seed(args, fallback: int = 0) -> int:
    return args.seed if args.seed is not None else fallback


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mitoscan",
                                     description="Mitosis detection pipeline")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("localize", help="emit candidate centroids as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_localize)

    p = subs.add_parser("build", help="run sample balancing, write the manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_build)

    p = subs.add_parser("train", help="train a model on the train split")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None, help="write per-epoch loss CSV here")
    p.add_argument("--manifest", default=None,
                   help="train on exactly the patches in this manifest")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("detect", help="run detection, write detections JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    _common(p)
    p.set_defaults(func=cmd_detect)

    p = subs.add_parser("eval", help="score detections against annotations")
    p.add_argument("--detections", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("ablate", help="train/evaluate several flag combinations")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default="none,all",
                   help="comma list of none|all|flag+flag (e.g. dgsb+incdp)")
    _common(p)
    p.set_defaults(func=cmd_ablate)

    p = subs.add_parser("plot-features", help="2-D embedding scatter of patches")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_plot_features)

    return parser


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    synth = replace(cfg.synth, seed=_seed(args, cfg.synth.seed))
    images, annots = generate_synthetic(synth, stain_matrix=cfg.stain.matrix())
    write_dataset(args.out, images, annots)
    log.info("wrote %d images to %s", len(images), args.out)
    print(f"generated {len(images)} images, {len(annots.points)} points -> {args.out}")
    return 0


def cmd_localize(args) -> int:
    cfg = load_config(args.config)
    images, annots = read_dataset(args.data)
    m = cfg.stain.matrix()
    rows = []
    for info in annots.images:
        cands = extract_candidates(hematoxylin_channel(images[info.id], m), cfg.localize)
        rows.extend({"image_id": info.id, "cx": c.cx, "cy": c.cy, "area": c.area}
                    for c in cands)
    Path(args.out).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    print(f"{len(rows)} candidates -> {args.out}")
    return 0


def _train_split_dataset(args, cfg):
    images, annots = read_dataset(args.data)
    train_ids, _ = pipeline.split_ids(annots, cfg.pipeline.train_images)
    return {i: images[i] for i in train_ids}, annots


def cmd_build(args) -> int:
    cfg = load_config(args.config)
    train_imgs, annots = _train_split_dataset(args, cfg)
    dataset = assemble_dataset(train_imgs, annots, cfg)
    selected, clusters = dgsb_select(dataset, cfg, _seed(args))
    pos_ids = [pid for pid, lab in zip(dataset.ids, dataset.labels) if lab == 1]
    kept = pos_ids + [dataset.ids[i] for i in selected]
    cluster_of = {dataset.ids[i]: c for i, c in clusters.items()}
    pipeline.write_manifest(args.out, dataset, kept, cluster_of)
    print(f"kept {len(kept)} of {len(dataset)} patches -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_imgs, annots = _train_split_dataset(args, cfg)
    dataset = assemble_dataset(train_imgs, annots, cfg)
    sample = True
    if args.manifest:
        dataset = pipeline.select_from_manifest(dataset, pipeline.read_manifest(args.manifest))
        sample = False
    result = train(dataset, cfg, _seed(args), sample=sample)
    save_checkpoint(args.out, result.model, result.centers_parent, result.centers_child,
                    result.child_weights, config=cfg.to_flat_dict(), seed=_seed(args))
    if args.history:
        pipeline.write_history_csv(args.history, result.history)
    last = result.history[-1]
    print(f"trained on {len(result.selected_ids)} patches, "
          f"final total loss {last['total']:.4f} -> {args.out}")
    return 0


def cmd_detect(args) -> int:
    cfg = load_config(args.config)
    images, annots = read_dataset(args.data)
    train_ids, test_ids = pipeline.split_ids(annots, cfg.pipeline.train_images)
    ids = {"train": train_ids, "test": test_ids, "all": [im.id for im in annots.images]}
    ckpt = load_checkpoint(args.model)
    detections = pipeline.detect_all(images, ckpt.model, cfg, image_ids=ids[args.split])
    pipeline.save_detections(args.out, detections)
    n = sum(len(v) for v in detections.values())
    print(f"{n} detections on {len(detections)} images -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    _, annots = read_dataset(args.data)
    detections = pipeline.load_detections(args.detections)
    metrics = pipeline.evaluate_detections(detections, annots, cfg.pipeline.match_radius)
    Path(args.out).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(f"precision {metrics['precision']:.4f}  recall {metrics['recall']:.4f}  "
          f"f1 {metrics['f1']:.4f}  (tp {metrics['tp']} fp {metrics['fp']} fn {metrics['fn']})")
    return 0


def _parse_variants(text: str) -> list[dict]:
    variants = []
    for token in text.split(","):
        token = token.strip().lower()
        if not token:
            continue
        if token == "none":
            variants.append({k: False for k in FLAG_NAMES})
        elif token == "all":
            variants.append({k: True for k in FLAG_NAMES})
        else:
            parts = token.split("+")
            unknown = [p for p in parts if p not in FLAG_NAMES]
            if unknown:
                raise ValueError(f"unknown ablation flags: {unknown}")
            variants.append({k: k in parts for k in FLAG_NAMES})
    if not variants:
        raise ValueError("no ablation variants given")
    return variants


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    variants = _parse_variants(args.variants)
    images, annots = read_dataset(args.data)
    rows = pipeline.run_ablation(images, annots, variants, cfg, _seed(args))
    Path(args.out).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    header = f"{'dgsb':>5} {'se':>5} {'incdp':>5} {'P':>8} {'R':>8} {'F1':>8}"
    print(header)
    for row in rows:
        print(f"{str(row['dgsb']):>5} {str(row['se']):>5} {str(row['incdp']):>5} "
              f"{row['precision']:8.4f} {row['recall']:8.4f} {row['f1']:8.4f}")
    return 0


def cmd_plot_features(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = load_config(args.config)
    images, annots = read_dataset(args.data)
    dataset = assemble_dataset(images, annots, cfg)
    if not dataset.patches:
        raise ValueError("no candidate patches found to plot")
    features = embed(dataset.patches, DefaultPatchEmbedder(stain_matrix=cfg.stain.matrix()))
    centered = features - features.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[:2].T

    fig, ax = plt.subplots(figsize=(6, 6))
    neg = dataset.labels == 0
    ax.scatter(proj[neg, 0], proj[neg, 1], s=12, alpha=0.6, label="negative")
    ax.scatter(proj[~neg, 0], proj[~neg, 1], s=16, alpha=0.8, label="mitosis")
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    plt.close(fig)
    print(f"feature scatter of {len(dataset)} patches -> {args.out}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
