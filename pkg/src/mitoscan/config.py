"""Flat key=value configuration.

One key per line, ``#`` comments, values typed per key. Unknown keys are
rejected so typos fail loudly. Stain matrices appear as comma-separated
numbers: 3 per stain vector, 9 (row-major) per named domain matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .localize import LocalizeConfig
from .stain import DEFAULT_EOSIN, DEFAULT_HEMATOXYLIN, StainMatrix
from .synthetic import SyntheticConfig

# Alternative stain bases used by the restain augmentation; rows are
# normalized on construction.
DEFAULT_DOMAIN_VECTORS = {
    "d1": (DEFAULT_HEMATOXYLIN, DEFAULT_EOSIN),
    "d2": ((0.58, 0.75, 0.32), (0.15, 0.95, 0.17)),
    "d3": ((0.70, 0.65, 0.29), (0.05, 0.92, 0.28)),
}


@dataclass
class StainSettings:
    hematoxylin: tuple[float, float, float] = DEFAULT_HEMATOXYLIN
    eosin: tuple[float, float, float] = DEFAULT_EOSIN
    domains: dict[str, StainMatrix] = field(default_factory=dict)

    def matrix(self) -> StainMatrix:
        return StainMatrix.from_vectors(self.hematoxylin, self.eosin)

    def domain_matrices(self) -> dict[str, StainMatrix]:
        if self.domains:
            return dict(self.domains)
        return {name: StainMatrix.from_vectors(h, e)
                for name, (h, e) in DEFAULT_DOMAIN_VECTORS.items()}


@dataclass
class BalanceSettings:
    k: int = 10
    m: int = 0  # 0 means auto: ceil(n_positives / k)
    epsilon: float = 0.5
    fdiff_epochs: int = 5


@dataclass
class ClassifySettings:
    t: int = 4
    gamma: float = 2.0
    lam: float = 0.5
    center_rate: float = 0.5
    mix_beta: float = 0.1
    mix_prob: float = 0.5
    w_min: float = 0.25
    w_max: float = 4.0


@dataclass
class PipelineSettings:
    patch_size: int = 80
    match_radius: float = 30.0
    score_threshold: float = 0.5
    label_radius: float = 12.0
    lr: float = 1e-3
    momentum: float = 0.0
    weight_decay: float = 5e-4
    batch_size: int = 16
    epochs: int = 60
    train_images: int = 30
    dgsb: bool = True
    se: bool = True
    incdp: bool = True


@dataclass
class Config:
    stain: StainSettings = field(default_factory=StainSettings)
    localize: LocalizeConfig = field(default_factory=LocalizeConfig)
    balance: BalanceSettings = field(default_factory=BalanceSettings)
    classify: ClassifySettings = field(default_factory=ClassifySettings)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    synth: SyntheticConfig = field(default_factory=SyntheticConfig)

    def to_flat_dict(self) -> dict:
        """Resolved scalar view, used for checkpoint snapshots."""
        out: dict = {}
        for section, names in _SCALAR_FIELDS.items():
            obj = getattr(self, section)
            for key, attr, _ in names:
                value = getattr(obj, attr)
                out[f"{section}.{key}"] = value
        out["stain.h"] = list(self.stain.hematoxylin)
        out["stain.e"] = list(self.stain.eosin)
        return out


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str, n: int) -> tuple[float, ...]:
    parts = [float(p) for p in text.replace(",", " ").split()]
    if len(parts) != n:
        raise ValueError(f"expected {n} numbers, got {len(parts)}")
    return tuple(parts)


# key suffix -> (attribute, parser) per section
_SCALAR_FIELDS: dict[str, list[tuple[str, str, type]]] = {
    "localize": [
        ("threshold_method", "threshold_method", str),
        ("fixed_threshold", "fixed_threshold", float),
        ("min_area", "min_area", int),
        ("max_area", "max_area", int),
        ("open_radius", "open_radius", int),
    ],
    "balance": [
        ("k", "k", int),
        ("m", "m", int),
        ("epsilon", "epsilon", float),
        ("fdiff_epochs", "fdiff_epochs", int),
    ],
    "classify": [
        ("t", "t", int),
        ("gamma", "gamma", float),
        ("lambda", "lam", float),
        ("center_rate", "center_rate", float),
        ("mix_beta", "mix_beta", float),
        ("mix_prob", "mix_prob", float),
        ("w_min", "w_min", float),
        ("w_max", "w_max", float),
    ],
    "pipeline": [
        ("patch_size", "patch_size", int),
        ("match_radius", "match_radius", float),
        ("score_threshold", "score_threshold", float),
        ("label_radius", "label_radius", float),
        ("lr", "lr", float),
        ("momentum", "momentum", float),
        ("weight_decay", "weight_decay", float),
        ("batch_size", "batch_size", int),
        ("epochs", "epochs", int),
        ("train_images", "train_images", int),
        ("dgsb", "dgsb", _parse_bool),
        ("se", "se", _parse_bool),
        ("incdp", "incdp", _parse_bool),
    ],
    "synth": [
        ("images", "images", int),
        ("size", "size", int),
        ("nuclei", "nuclei", int),
        ("mitoses", "mitoses", int),
        ("impostors", "impostors", int),
        ("radius_min", "radius_min", float),
        ("radius_max", "radius_max", float),
        ("min_sep", "min_sep", float),
        ("low_intensity_fraction", "low_intensity_fraction", float),
        ("seed", "seed", int),
    ],
}


def parse_config(text: str, base: Config | None = None) -> Config:
    cfg = base or Config()
    updates: dict[str, dict] = {}
    stain_updates: dict = {}
    domains: dict[str, StainMatrix] = dict(cfg.stain.domains)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()

        if key == "stain.h":
            stain_updates["hematoxylin"] = _parse_floats(value, 3)
            continue
        if key == "stain.e":
            stain_updates["eosin"] = _parse_floats(value, 3)
            continue
        if key.startswith("stain.domains."):
            name = key[len("stain.domains."):]
            if not name:
                raise ValueError(f"line {lineno}: domain name missing")
            nums = _parse_floats(value, 9)
            rows = np.asarray([nums[0:3], nums[3:6], nums[6:9]])
            domains[name] = StainMatrix(rows=rows)
            continue

        section, _, suffix = key.partition(".")
        table = _SCALAR_FIELDS.get(section)
        entry = next((e for e in table or [] if e[0] == suffix), None)
        if entry is None:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        _, attr, parser = entry
        try:
            updates.setdefault(section, {})[attr] = parser(value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {exc}") from exc

    stain = replace(cfg.stain, domains=domains, **stain_updates)
    return Config(
        stain=stain,
        localize=replace(cfg.localize, **updates.get("localize", {})),
        balance=replace(cfg.balance, **updates.get("balance", {})),
        classify=replace(cfg.classify, **updates.get("classify", {})),
        pipeline=replace(cfg.pipeline, **updates.get("pipeline", {})),
        synth=replace(cfg.synth, **updates.get("synth", {})),
    )


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    return parse_config(Path(path).read_text())
