"""Patch classifier: small conv backbone, parent/child heads, CAM, checkpoints.

The head layout is CAM-compatible by construction: backbone feature maps are
average-pooled into two linear heads, so a class activation map is just the
head-weighted sum of the final feature maps. Pooling is restricted to the
central half of the map (see pool_features); the CAM itself always uses the
full map so off-center activations remain visible.

Checkpoints use a custom container (JSON header plus raw array bytes)
because archive formats embed timestamps and would break byte-for-byte
reproducibility.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .mixing import efdmix

CKPT_MAGIC = b"MSCKPT1\n"

IMAGE_MEAN = 0.8
IMAGE_STD = 0.2


def patches_to_tensor(pixel_arrays) -> torch.Tensor:
    """Stack uint8 RGB patches into a standardized NCHW float tensor.

    Standardization centers typical H&E brightness near zero; raw [0, 1]
    values leave the first conv layer poorly conditioned because tissue
    pixels cluster tightly around 0.8.
    """
    stack = np.stack([np.ascontiguousarray(a) for a in pixel_arrays]).astype(np.float32)
    stack = (stack / 255.0 - IMAGE_MEAN) / IMAGE_STD
    return torch.from_numpy(stack).permute(0, 3, 1, 2).contiguous()


@dataclass
class MixPlan:
    """Within-batch pairing and weights for feature mixing."""

    perm: torch.Tensor
    mu: torch.Tensor
    sorted_mode: bool = True


class TinyConvBackbone(nn.Module):
    """Four conv blocks, 3 -> 16 -> 32 -> 64 -> 64 channels, each halving resolution.

    Three blocks turned out too shallow to train from scratch at the pinned
    learning rate: the receptive field of a final-map cell barely covers a
    nucleus, and the classifier stalls near chance. The fourth block roughly
    doubles the receptive field and fixes that without changing the head
    width.
    """

    def __init__(self):
        super().__init__()
        self.block1 = self._block(3, 16)
        self.block2 = self._block(16, 32)
        self.block3 = self._block(32, 64)
        self.block4 = self._block(64, 64)
        self.out_channels = 64

    @staticmethod
    def _block(cin: int, cout: int) -> nn.Sequential:
        return nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=1),
            nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
        )

    def forward(self, x: torch.Tensor, mix: MixPlan | None = None) -> torch.Tensor:
        f = self.block2(self.block1(x))
        if mix is not None:
            b, c, h, w = f.shape
            flat = f.reshape(b, c, h * w)
            mu = mix.mu.to(f.dtype).reshape(b, 1, 1)
            flat = efdmix(flat, flat[mix.perm], mu, sorted_mode=mix.sorted_mode)
            f = flat.reshape(b, c, h, w)
        return self.block4(self.block3(f))


def pool_features(maps: torch.Tensor) -> torch.Tensor:
    """Average the central half of each feature map.

    Candidate patches are centered on the nucleus, so the outer margin is
    mostly background tissue; averaging over the whole map dilutes the object
    signal by an order of magnitude. Maps smaller than 4x4 are averaged
    whole.
    """
    h, w = maps.shape[-2], maps.shape[-1]
    if h >= 4 and w >= 4:
        maps = maps[..., h // 4: h - h // 4, w // 4: w - w // 4]
    return maps.mean(dim=(-2, -1))


class PatchClassifier(nn.Module):
    """Backbone + center-weighted pooling + linear parent/child heads."""

    def __init__(self, n_child: int = 8):
        super().__init__()
        self.backbone = TinyConvBackbone()
        self.n_child = n_child
        self.parent_head = nn.Linear(self.backbone.out_channels, 2)
        self.child_head = nn.Linear(self.backbone.out_channels, n_child)

    def forward(self, x: torch.Tensor, mix: MixPlan | None = None):
        maps = self.backbone(x, mix=mix)
        pooled = pool_features(maps)
        return self.parent_head(pooled), self.child_head(pooled), pooled

    def feature_maps(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)

    def parent_probs(self, x: torch.Tensor) -> torch.Tensor:
        logits, _, _ = self.forward(x)
        return torch.softmax(logits, dim=1)[:, 1]


@dataclass
class CamResult:
    heatmap: np.ndarray
    argmax: tuple[int, int]  # (row, col) in map coordinates
    point: tuple[int, int] | None  # (x, y) in patch coordinates


def cam(feature_maps, class_weights, patch_size: int | None = None) -> CamResult:
    """Class activation map: head-weighted sum of feature maps, unclamped.

    The argmax is reported in map coordinates; with ``patch_size`` given it
    is also upscaled to patch coordinates at the center of the winning map
    cell. A flat map falls back to the patch center.
    """
    maps = np.asarray(
        feature_maps.detach().cpu().numpy() if isinstance(feature_maps, torch.Tensor)
        else feature_maps, dtype=np.float64)
    weights = np.asarray(
        class_weights.detach().cpu().numpy() if isinstance(class_weights, torch.Tensor)
        else class_weights, dtype=np.float64)
    if maps.ndim != 3 or weights.shape != (maps.shape[0],):
        raise ValueError("expected K x h x w maps and K weights")
    heatmap = np.tensordot(weights, maps, axes=1)
    h, w = heatmap.shape
    if float(heatmap.max() - heatmap.min()) < 1e-12:
        row, col = h // 2, w // 2
        point = (patch_size // 2, patch_size // 2) if patch_size else None
        return CamResult(heatmap=heatmap, argmax=(row, col), point=point)
    row, col = np.unravel_index(int(np.argmax(heatmap)), heatmap.shape)
    point = None
    if patch_size:
        point = (int((col + 0.5) * patch_size / w), int((row + 0.5) * patch_size / h))
    return CamResult(heatmap=heatmap, argmax=(int(row), int(col)), point=point)


@dataclass
class Checkpoint:
    model: PatchClassifier
    centers_parent: np.ndarray
    centers_child: np.ndarray
    child_weights: np.ndarray
    config: dict
    seed: int


def save_checkpoint(path, model: PatchClassifier, centers_parent, centers_child,
                    child_weights, config: dict, seed: int) -> None:
    arrays: dict[str, np.ndarray] = {
        "centers_parent": np.asarray(centers_parent),
        "centers_child": np.asarray(centers_child),
        "child_weights": np.asarray(child_weights),
    }
    for key, tensor in model.state_dict().items():
        arrays[f"model/{key}"] = tensor.detach().cpu().numpy()

    names = sorted(arrays)
    header = {
        "format": 1,
        "seed": int(seed),
        "n_child": int(model.n_child),
        "config": config,
        "arrays": [
            {"name": n, "dtype": str(arrays[n].dtype), "shape": list(arrays[n].shape)}
            for n in names
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack(">Q", len(header_bytes)))
        fh.write(header_bytes)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n]).tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ValueError("not a checkpoint file")
        (hlen,) = struct.unpack(">Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        arrays: dict[str, np.ndarray] = {}
        for meta in header["arrays"]:
            dtype = np.dtype(meta["dtype"])
            count = int(np.prod(meta["shape"], dtype=np.int64)) if meta["shape"] else 1
            buf = fh.read(count * dtype.itemsize)
            arrays[meta["name"]] = np.frombuffer(buf, dtype=dtype).reshape(meta["shape"]).copy()

    model = PatchClassifier(n_child=header["n_child"])
    state = {k[len("model/"):]: torch.from_numpy(v) for k, v in arrays.items()
             if k.startswith("model/")}
    model.load_state_dict(state)
    model.eval()
    return Checkpoint(
        model=model,
        centers_parent=arrays["centers_parent"],
        centers_child=arrays["centers_child"],
        child_weights=arrays["child_weights"],
        config=header["config"],
        seed=header["seed"],
    )
