"""Cluster-stratified negative sampling and the difficulty filter."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .localize import Patch
from .stain import StainMatrix, hematoxylin_channel


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    # inertia measured after each assignment step; must be non-increasing
    inertia_history: list[float] = field(default_factory=list)


class DefaultPatchEmbedder:
    """Training-free 160-d patch descriptor.

    Concatenates an 8x8 mean-pooled grayscale thumbnail, an 8x8 mean-pooled
    hematoxylin-concentration thumbnail, and a 32-bin hematoxylin histogram,
    each block L2-normalized. A learned backbone can replace this via the
    ``embedder`` argument of :func:`embed`.
    """

    def __init__(self, stain_matrix: StainMatrix | None = None, grid: int = 8,
                 hist_bins: int = 32, hist_range: tuple[float, float] = (0.0, 2.5)):
        self.stain_matrix = stain_matrix or StainMatrix.default()
        self.grid = grid
        self.hist_bins = hist_bins
        self.hist_range = hist_range
        self.dim = grid * grid * 2 + hist_bins

    def __call__(self, pixels: np.ndarray) -> np.ndarray:
        gray = np.asarray(pixels, dtype=np.float64).mean(axis=2) / 255.0
        hema = hematoxylin_channel(pixels, self.stain_matrix)
        blocks = [
            _block_mean(gray, self.grid).ravel(),
            _block_mean(hema, self.grid).ravel(),
            np.histogram(hema, bins=self.hist_bins, range=self.hist_range)[0].astype(np.float64),
        ]
        return np.concatenate([_l2(b) for b in blocks])


def _block_mean(a: np.ndarray, grid: int) -> np.ndarray:
    rows = np.array_split(np.arange(a.shape[0]), grid)
    cols = np.array_split(np.arange(a.shape[1]), grid)
    out = np.empty((grid, grid), dtype=np.float64)
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            out[i, j] = a[np.ix_(r, c)].mean()
    return out


def _l2(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def embed(patches: list[Patch], embedder=None) -> np.ndarray:
    if not patches:
        raise ValueError("no patches to embed")
    embedder = embedder or DefaultPatchEmbedder()
    rows = [embedder(getattr(p, "pixels", p)) for p in patches]
    return np.stack(rows)


def kmeans(features: np.ndarray, k: int, seed: int) -> ClusterAssignment:
    """Lloyd's algorithm with k-means++ seeding.

    Deterministic given ``seed``; stops when the largest centroid shift
    drops below 1e-6 or after 300 iterations. A cluster that loses all its
    points is re-seeded with the point currently farthest from its own
    centroid.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be 2-D")
    n = x.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, k, rng)

    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(300):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        assigned = d2[np.arange(n), labels]
        history.append(float(assigned.sum()))

        new_centroids = centroids.copy()
        stolen: set[int] = set()
        for j in range(k):
            if not np.any(labels == j):
                # re-seed from the farthest point not already used as a seed
                order = np.argsort(-assigned, kind="stable")
                pick = next(int(i) for i in order if int(i) not in stolen)
                stolen.add(pick)
                labels[pick] = j
        for j in range(k):
            members = labels == j
            if members.any():
                new_centroids[j] = x[members].mean(axis=0)
        shift = np.linalg.norm(new_centroids - centroids, axis=1).max()
        centroids = new_centroids
        if shift < 1e-6:
            break

    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(n), labels].sum())
    history.append(inertia)
    return ClusterAssignment(labels=labels, centroids=centroids, inertia=inertia,
                             inertia_history=history)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    min_d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = min_d2.sum()
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=min_d2 / total))
        centroids[j] = x[pick]
        min_d2 = np.minimum(min_d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def sample_balanced(assign: ClusterAssignment, m: int, seed: int) -> list[int]:
    """Draw up to m indices per cluster, uniformly without replacement."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    picked: list[int] = []
    k = assign.centroids.shape[0]
    for j in range(k):
        members = np.flatnonzero(assign.labels == j)
        if members.size == 0:
            continue
        take = min(m, members.size)
        picked.extend(int(i) for i in rng.choice(members, size=take, replace=False))
    return sorted(picked)


def difficulty_filter(pos_probs, epsilon: float) -> list[int]:
    """Keep negatives the classifier is unsure about: pos_prob >= epsilon."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    probs = np.asarray(pos_probs, dtype=np.float64)
    if probs.size and (probs.min() < 0 or probs.max() > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return [int(i) for i in np.flatnonzero(probs >= epsilon)]
