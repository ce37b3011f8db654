"""Training orchestration: sampling, augmentation, parent and joint phases.

The run composes three switchable stages. Negative selection is either
cluster-balanced hard-negative mining (``dgsb``) or plain random balanced
sampling. Stain enhancement (``se``) restains patches into alternative
color domains and mixes feature distributions within batches. With
``incdp`` on, a second phase continues training from the parent-only model
with child-class losses added; otherwise training stays parent-only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .balancing import (DefaultPatchEmbedder, difficulty_filter, embed, kmeans,
                        sample_balanced)
from .classify import (center_loss, child_focal_loss, child_weights, focal_loss,
                       generate_child_labels, joint_loss, update_centers)
from .config import Config
from .localize import Patch, crop_patches, extract_candidates
from .mixing import sample_mix_weights
from .model import MixPlan, PatchClassifier, patches_to_tensor
from .stain import hematoxylin_channel, restain


@dataclass
class PatchDataset:
    patches: list[Patch]
    labels: np.ndarray
    ids: list[str]

    def __len__(self) -> int:
        return len(self.patches)


@dataclass
class TrainResult:
    model: PatchClassifier
    centers_parent: np.ndarray
    centers_child: np.ndarray
    child_weights: np.ndarray
    history: list[dict]
    selected_ids: list[str]
    cluster_of: dict[str, int] = field(default_factory=dict)


def assemble_dataset(images: dict[str, np.ndarray], annots, cfg: Config) -> PatchDataset:
    """Localize candidates on every image and label the resulting patches.

    A patch is positive when a mitosis ground-truth point lies within
    ``pipeline.label_radius`` of its candidate centroid.
    """
    m = cfg.stain.matrix()
    patches: list[Patch] = []
    labels: list[int] = []
    ids: list[str] = []
    for info in annots.images:
        if info.id not in images:
            continue
        img = images[info.id]
        cands = extract_candidates(hematoxylin_channel(img, m), cfg.localize)
        crops = crop_patches(img, cands, cfg.pipeline.patch_size, image_id=info.id)
        mito = [(p.x, p.y) for p in annots.points_for(info.id, "mitosis")]
        for idx, (cand, patch) in enumerate(zip(cands, crops)):
            hit = any(math.hypot(cand.cx - x, cand.cy - y) <= cfg.pipeline.label_radius
                      for x, y in mito)
            patches.append(patch)
            labels.append(1 if hit else 0)
            ids.append(f"{info.id}:{idx}")
    return PatchDataset(patches=patches, labels=np.asarray(labels, dtype=np.int64), ids=ids)


def _spawn_seeds(seed: int, n: int) -> list[int]:
    return [int(c.generate_state(1)[0]) for c in np.random.SeedSequence(seed).spawn(n)]


def _random_flips(pixel_arrays: list[np.ndarray], rng) -> list[np.ndarray]:
    """Random 90-degree rotation plus optional mirror, per sample.

    Mitotic figures have no preferred orientation, so dihedral augmentation
    is free variance reduction on small training sets. Applied in every
    training variant; the se flag controls only stain-level augmentation.
    """
    out = []
    for px in pixel_arrays:
        px = np.rot90(px, k=int(rng.integers(4)))
        if rng.random() < 0.5:
            px = px[:, ::-1]
        out.append(px)
    return out


class _Augmenter:
    """Per-sample restain jitter plus per-batch feature-mixing decisions."""

    def __init__(self, cfg: Config, seed: int):
        self.rng = np.random.default_rng(seed)
        self.src = cfg.stain.matrix()
        self.domains = list(cfg.stain.domain_matrices().values())
        self.mix_prob = cfg.classify.mix_prob
        self.mix_beta = cfg.classify.mix_beta

    def restain_batch(self, pixel_arrays: list[np.ndarray]) -> list[np.ndarray]:
        out = []
        for px in pixel_arrays:
            tgt = self.domains[int(self.rng.integers(len(self.domains)))]
            gain = self.rng.uniform(0.9, 1.1, size=3)
            out.append(restain(px, self.src, tgt, gain=gain))
        return out

    def mix_plan(self, batch_size: int) -> MixPlan | None:
        if self.rng.random() >= self.mix_prob:
            return None
        perm = torch.as_tensor(self.rng.permutation(batch_size))
        mu = sample_mix_weights(self.rng, batch_size, self.mix_beta)
        return MixPlan(perm=perm, mu=mu)


@dataclass
class _Phase:
    """Mutable per-phase training state (centers live here between batches).

    ``centers_parent`` is None during the warm-up epochs: a from-scratch
    backbone starts with class means that coincide, and switching the center
    term on at that point drags every feature toward one shared point faster
    than the focal term can pull classes apart. Once features carry class
    signal the centers are initialized at the class means and the term joins.
    """

    centers_parent: torch.Tensor | None = None
    centers_child: torch.Tensor | None = None
    child_labels: np.ndarray | None = None
    weights: np.ndarray | None = None


def _epoch_order(y: np.ndarray, rng) -> np.ndarray:
    """Shuffled sample order, oversampling the minority class to parity.

    Hard-negative selection can leave far fewer negatives than positives;
    without oversampling the majority class swamps the summed loss and the
    model degenerates to predicting it everywhere. Balanced input passes
    through as a plain shuffle.
    """
    order = rng.permutation(len(y))
    counts = np.bincount(y, minlength=2)
    if counts.min() > 0 and counts.min() != counts.max():
        minority = int(np.argmin(counts))
        extra = rng.choice(np.flatnonzero(y == minority),
                           size=int(counts.max() - counts.min()), replace=True)
        order = rng.permutation(np.concatenate([order, extra]))
    return order


def _run_epoch(model, optimizer, patches, y, phase: _Phase, cfg: Config,
               shuffle_rng, aug: _Augmenter | None) -> dict[str, float]:
    model.train()
    order = _epoch_order(y, shuffle_rng)
    n = len(order)
    gamma, alpha, lam = cfg.classify.gamma, cfg.classify.center_rate, cfg.classify.lam
    sums = {"L_focal_p": 0.0, "L_center_p": 0.0, "L_focal_c": 0.0, "L_center_c": 0.0}
    joint = phase.child_labels is not None

    for start in range(0, n, cfg.pipeline.batch_size):
        idx = order[start:start + cfg.pipeline.batch_size]
        pixel_arrays = [patches[i].pixels for i in idx]
        if aug is not None:
            pixel_arrays = aug.restain_batch(pixel_arrays)
        pixel_arrays = _random_flips(pixel_arrays, shuffle_rng)
        xb = patches_to_tensor(pixel_arrays)
        yb = torch.as_tensor(y[idx])
        mix = aug.mix_plan(len(idx)) if aug is not None else None

        parent_logits, child_logits, pooled = model(xb, mix=mix)
        probs = torch.softmax(parent_logits, dim=1)[:, 1]
        lfp = focal_loss(probs, yb, gamma)
        if phase.centers_parent is not None:
            lcp = center_loss(pooled, yb, phase.centers_parent)
        else:
            lcp = torch.zeros(())
        if joint:
            cb = torch.as_tensor(phase.child_labels[idx])
            child_probs = torch.softmax(child_logits, dim=1)
            lfc = child_focal_loss(child_probs, cb, phase.weights, gamma)
            lcc = center_loss(pooled, cb, phase.centers_child)
            loss = joint_loss(lfp, lcp, lfc, lcc, lam)
        else:
            lfc = lcc = torch.zeros(())
            loss = joint_loss(lfp, lcp, 0.0, 0.0, 0.0)

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        detached = pooled.detach()
        if phase.centers_parent is not None:
            phase.centers_parent = update_centers(phase.centers_parent, detached, yb, alpha)
        if joint:
            phase.centers_child = update_centers(phase.centers_child, detached, cb, alpha)

        sums["L_focal_p"] += float(lfp.detach())
        sums["L_center_p"] += float(lcp.detach())
        sums["L_focal_c"] += float(lfc.detach())
        sums["L_center_c"] += float(lcc.detach())

    terms = {k: v / n for k, v in sums.items()}
    if not joint:
        del terms["L_focal_c"], terms["L_center_c"]
        terms["total"] = terms["L_focal_p"] + terms["L_center_p"]
    else:
        terms["total"] = (terms["L_focal_p"] + terms["L_center_p"]
                          + lam * (terms["L_focal_c"] + terms["L_center_c"]))
    return terms


def _extract_features(model, patches, batch_size: int) -> np.ndarray:
    model.eval()
    rows = []
    with torch.no_grad():
        for start in range(0, len(patches), batch_size):
            xb = patches_to_tensor([p.pixels for p in patches[start:start + batch_size]])
            _, _, pooled = model(xb)
            rows.append(pooled.numpy())
    return np.concatenate(rows).astype(np.float64)


def _predict_pos_probs(model, patches, batch_size: int) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(patches), batch_size):
            xb = patches_to_tensor([p.pixels for p in patches[start:start + batch_size]])
            logits, _, _ = model(xb)
            out.append(torch.softmax(logits, dim=1)[:, 1].numpy())
    return np.concatenate(out)


def dgsb_select(dataset: PatchDataset, cfg: Config, seed: int
                ) -> tuple[list[int], dict[int, int]]:
    """Two-stage negative selection.

    Stage one clusters negative-patch embeddings and samples m per cluster;
    stage two trains a short-budget classifier and keeps only negatives it
    is not yet confident about. Returns selected dataset indices (of
    negatives) and a cluster id per selected index.
    """
    s_kmeans, s_sample, s_fdiff = _spawn_seeds(seed, 3)
    labels = dataset.labels
    pos_idx = np.flatnonzero(labels == 1)
    neg_idx = np.flatnonzero(labels == 0)
    if len(pos_idx) == 0 or len(neg_idx) == 0:
        raise ValueError("dataset must contain both parent classes")

    embedder = DefaultPatchEmbedder(stain_matrix=cfg.stain.matrix())
    features = embed([dataset.patches[i] for i in neg_idx], embedder)
    k = min(cfg.balance.k, len(neg_idx))
    assign = kmeans(features, k, seed=s_kmeans)
    m = cfg.balance.m if cfg.balance.m > 0 else math.ceil(len(pos_idx) / k)
    first = sample_balanced(assign, m, seed=s_sample)

    fdiff_patches = [dataset.patches[i] for i in pos_idx] \
        + [dataset.patches[neg_idx[j]] for j in first]
    fdiff_labels = np.concatenate([np.ones(len(pos_idx), dtype=np.int64),
                                   np.zeros(len(first), dtype=np.int64)])
    fdiff_cfg = replace(cfg, pipeline=replace(cfg.pipeline, epochs=cfg.balance.fdiff_epochs,
                                              se=False, incdp=False))
    fdiff = _fit(fdiff_patches, fdiff_labels, fdiff_cfg, s_fdiff)
    probs = _predict_pos_probs(fdiff.model, [dataset.patches[neg_idx[j]] for j in first],
                               cfg.pipeline.batch_size)
    kept = list(difficulty_filter(probs, cfg.balance.epsilon))
    # On easily separable data the filter can throw away nearly everything,
    # leaving the classifier with no picture of ordinary tissue and a
    # training set that is almost all positive. Keep at least 40% of the
    # stage-one sample, topping up with the next-hardest negatives by
    # predicted probability.
    floor = min(len(first), math.ceil(0.4 * len(first)))
    if len(kept) < floor:
        in_kept = set(kept)
        by_difficulty = np.argsort(-probs, kind="stable")
        for i in by_difficulty:
            if len(kept) >= floor:
                break
            if int(i) not in in_kept:
                kept.append(int(i))
        kept.sort()
    chosen = [first[i] for i in kept]
    selected = [int(neg_idx[j]) for j in chosen]
    clusters = {int(neg_idx[j]): int(assign.labels[j]) for j in chosen}
    return selected, clusters


def _class_mean_centers(model, patches, labels, batch_size: int) -> torch.Tensor:
    feats = _extract_features(model, patches, batch_size)
    means = np.stack([feats[labels == j].mean(axis=0) for j in (0, 1)])
    return torch.as_tensor(means, dtype=torch.float32)


def _fit(patches: list[Patch], labels: np.ndarray, cfg: Config, seed: int) -> TrainResult:
    """Parent phase, then an optional joint phase warm-started from it."""
    torch.manual_seed(seed)
    s_shuffle, s_aug, s_child = _spawn_seeds(seed, 3)
    model = PatchClassifier(n_child=2 * cfg.classify.t)
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.pipeline.lr,
                                momentum=cfg.pipeline.momentum,
                                weight_decay=cfg.pipeline.weight_decay)
    dim = model.backbone.out_channels
    phase = _Phase()
    aug = _Augmenter(cfg, s_aug) if cfg.pipeline.se else None
    shuffle_rng = np.random.default_rng(s_shuffle)
    history: list[dict] = []

    warm = min(cfg.pipeline.epochs, max(1, cfg.pipeline.epochs // 4))
    epoch = 0
    for _ in range(cfg.pipeline.epochs):
        if epoch == warm:
            phase.centers_parent = _class_mean_centers(model, patches, labels,
                                                       cfg.pipeline.batch_size)
        terms = _run_epoch(model, optimizer, patches, labels, phase, cfg, shuffle_rng, aug)
        history.append({"epoch": epoch, **terms})
        epoch += 1
    if phase.centers_parent is None:
        phase.centers_parent = _class_mean_centers(model, patches, labels,
                                                   cfg.pipeline.batch_size)

    t = cfg.classify.t
    centers_child = np.zeros((2 * t, dim))
    weights = np.ones(2 * t)
    if cfg.pipeline.incdp:
        features = _extract_features(model, patches, cfg.pipeline.batch_size)
        child = generate_child_labels(features, labels, t, seed=s_child)
        centroids = np.stack([features[child == j].mean(axis=0) for j in range(2 * t)])
        weights = child_weights(centroids, t, (cfg.classify.w_min, cfg.classify.w_max))
        phase.centers_child = torch.as_tensor(centroids, dtype=torch.float32)
        phase.child_labels = child
        phase.weights = weights
        for _ in range(cfg.pipeline.epochs):
            terms = _run_epoch(model, optimizer, patches, labels, phase, cfg,
                               shuffle_rng, aug)
            history.append({"epoch": epoch, **terms})
            epoch += 1
        centers_child = phase.centers_child.numpy().astype(np.float64)

    return TrainResult(
        model=model,
        centers_parent=phase.centers_parent.numpy().astype(np.float64),
        centers_child=centers_child,
        child_weights=weights,
        history=history,
        selected_ids=[],
    )


def train(dataset: PatchDataset, cfg: Config, seed: int, sample: bool = True) -> TrainResult:
    """Flag-composed training over an assembled patch dataset.

    ``sample=False`` skips negative selection (use when the dataset was
    already balanced, e.g. built from a manifest).
    """
    labels = dataset.labels
    if not ((labels == 0).any() and (labels == 1).any()):
        raise ValueError("dataset must contain both parent classes")
    s_select, s_fit = _spawn_seeds(seed, 2)

    pos_idx = np.flatnonzero(labels == 1)
    neg_idx = np.flatnonzero(labels == 0)
    clusters: dict[int, int] = {}
    if not sample:
        train_idx = np.arange(len(dataset))
    elif cfg.pipeline.dgsb:
        selected, clusters = dgsb_select(dataset, cfg, s_select)
        train_idx = np.sort(np.concatenate([pos_idx, np.asarray(selected, dtype=np.int64)]))
    else:
        rng = np.random.default_rng(s_select)
        take = min(len(neg_idx), len(pos_idx))
        chosen = np.sort(rng.choice(neg_idx, size=take, replace=False))
        train_idx = np.sort(np.concatenate([pos_idx, chosen]))

    result = _fit([dataset.patches[i] for i in train_idx], labels[train_idx], cfg, s_fit)
    result.selected_ids = [dataset.ids[i] for i in train_idx]
    result.cluster_of = {dataset.ids[i]: c for i, c in clusters.items()}
    return result
