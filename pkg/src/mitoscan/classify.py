"""Parent/child losses and child-class bookkeeping.

The classifier carries two heads: a binary parent head (mitosis vs not)
and a child head over 2T pseudo-classes obtained by clustering each parent
class into T groups. Training combines a focal loss and a center loss per
head; child-class terms are weighted by how close each child centroid sits
to the opposite parent class.
"""
from __future__ import annotations

import numpy as np
import torch

from .balancing import kmeans

PROB_EPS = 1e-7


def generate_child_labels(features: np.ndarray, parent_labels: np.ndarray,
                          t: int, seed: int) -> np.ndarray:
    """Cluster each parent class into t child classes.

    Negative-sample clusters map to child ids [0, t), positive ones to
    [t, 2t). Requires at least t samples per parent class.
    """
    features = np.asarray(features, dtype=np.float64)
    parent = np.asarray(parent_labels)
    child = np.empty(parent.shape[0], dtype=np.int64)
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2)]
    for cls, offset, s in ((0, 0, seeds[0]), (1, t, seeds[1])):
        idx = np.flatnonzero(parent == cls)
        if idx.size < t:
            raise ValueError(f"parent class {cls} has {idx.size} samples, needs >= {t}")
        assign = kmeans(features[idx], t, seed=s)
        child[idx] = offset + assign.labels
    return child


def focal_loss(pos_probs: torch.Tensor, labels: torch.Tensor, gamma: float) -> torch.Tensor:
    """Summed binary focal loss on positive-class probabilities.

    With gamma=0 this reduces to the summed binary cross-entropy.
    """
    p = pos_probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    y = labels.to(p.dtype)
    pos_term = (1.0 - p) ** gamma * y * torch.log(p)
    neg_term = p**gamma * (1.0 - y) * torch.log(1.0 - p)
    return -(pos_term + neg_term).sum()


def center_loss(features: torch.Tensor, labels: torch.Tensor,
                centers: torch.Tensor) -> torch.Tensor:
    """Half the summed squared distance of each feature to its class center."""
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= centers.shape[0]):
        raise ValueError("label indexes a missing center")
    diff = features - centers[labels]
    return 0.5 * (diff * diff).sum()


def update_centers(centers: torch.Tensor, features: torch.Tensor,
                   labels: torch.Tensor, alpha: float) -> torch.Tensor:
    """Move each class center toward the batch mean of its members.

    c_j <- c_j - alpha * mean_i(c_j - x_i) over batch members of class j;
    classes absent from the batch keep their center. Inputs are treated as
    data (no gradients tracked).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    with torch.no_grad():
        out = centers.clone()
        for j in labels.unique().tolist():
            members = features[labels == j]
            out[j] = centers[j] - alpha * (centers[j] - members.mean(dim=0))
    return out


def child_weights(child_centroids: np.ndarray, t: int,
                  clip: tuple[float, float] = (0.25, 4.0)) -> np.ndarray:
    """Difficulty weight per child class from centroid geometry.

    d_j is the distance from child centroid j to the nearest centroid of
    the opposite parent class; weights are mean(d)/d_j clipped to ``clip``
    and renormalized to mean 1, so nearby (hard) child classes weigh more.
    """
    c = np.asarray(child_centroids, dtype=np.float64)
    if c.shape[0] != 2 * t:
        raise ValueError(f"expected {2 * t} centroids, got {c.shape[0]}")
    w_min, w_max = clip
    d = np.empty(2 * t, dtype=np.float64)
    for j in range(2 * t):
        opposite = c[t:] if j < t else c[:t]
        d[j] = np.linalg.norm(opposite - c[j], axis=1).min()
    with np.errstate(divide="ignore"):
        raw = np.where(d > 0, d.mean() / np.maximum(d, 1e-300), np.inf)
    w = np.clip(raw, w_min, w_max)
    return w / w.mean()


def child_focal_loss(child_probs: torch.Tensor, child_labels: torch.Tensor,
                     weights, gamma: float) -> torch.Tensor:
    """Class-weighted focal loss over child softmax probabilities.

    Only the true-class term enters: -sum_j w_j sum_{i: y_i=j}
    (1-p_ji)^gamma log p_ji.
    """
    row_sums = child_probs.sum(dim=1)
    if bool((row_sums - 1.0).abs().max() > 1e-5):
        raise ValueError("child_probs rows must sum to 1")
    n = child_probs.shape[0]
    p_true = child_probs[torch.arange(n), child_labels].clamp(PROB_EPS, 1.0 - PROB_EPS)
    w = torch.as_tensor(np.asarray(weights), dtype=child_probs.dtype,
                        device=child_probs.device)[child_labels]
    return -(w * (1.0 - p_true) ** gamma * torch.log(p_true)).sum()


def joint_loss(l_focal_parent, l_center_parent, l_focal_child, l_center_child, lam: float):
    """Total training loss: parent terms plus lambda-scaled child terms."""
    return l_focal_parent + l_center_parent + lam * (l_focal_child + l_center_child)
