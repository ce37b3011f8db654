"""Point-annotation schema and JSON ingestion.

Ground truth is point-level: each annotated object is a single (x, y) with
a label, either ``mitosis`` or ``hard_negative``. Box-annotated sources are
reduced to their box centers on load. Points may carry an optional ``kind``
tag (free-form shape metadata used by the synthetic generator); it rides
along through save/load but has no semantics here.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

VALID_LABELS = ("mitosis", "hard_negative")


class AnnotationError(ValueError):
    pass


class AnnotationFormatError(AnnotationError):
    """Malformed file: bad JSON, missing fields, unknown labels."""


class AnnotationBoundsError(AnnotationError):
    """A point lies outside its image."""


@dataclass(frozen=True)
class ImageInfo:
    id: str
    file: str
    width: int
    height: int


@dataclass(frozen=True)
class AnnotationPoint:
    image_id: str
    x: float
    y: float
    label: str
    kind: str | None = None


@dataclass
class AnnotationSet:
    images: list[ImageInfo] = field(default_factory=list)
    points: list[AnnotationPoint] = field(default_factory=list)

    def validate(self) -> "AnnotationSet":
        ids = [im.id for im in self.images]
        if len(set(ids)) != len(ids):
            raise AnnotationFormatError("duplicate image ids")
        dims = {im.id: (im.width, im.height) for im in self.images}
        for p in self.points:
            if p.label not in VALID_LABELS:
                raise AnnotationFormatError(f"unknown label {p.label!r}")
            if p.image_id not in dims:
                raise AnnotationFormatError(f"point references unknown image {p.image_id!r}")
            w, h = dims[p.image_id]
            if not (0 <= p.x < w and 0 <= p.y < h):
                raise AnnotationBoundsError(
                    f"point ({p.x}, {p.y}) outside image {p.image_id!r} ({w}x{h})")
        return self

    def points_for(self, image_id: str, label: str | None = None) -> list[AnnotationPoint]:
        return [p for p in self.points
                if p.image_id == image_id and (label is None or p.label == label)]

    def to_dict(self) -> dict:
        points = []
        for p in self.points:
            d = {"image_id": p.image_id, "x": p.x, "y": p.y, "label": p.label}
            if p.kind is not None:
                d["kind"] = p.kind
            points.append(d)
        return {
            "images": [{"id": im.id, "file": im.file, "width": im.width,
                        "height": im.height} for im in self.images],
            "points": points,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnnotationSet":
        try:
            images = [ImageInfo(id=im["id"], file=im["file"], width=int(im["width"]),
                                height=int(im["height"])) for im in data["images"]]
            points = [AnnotationPoint(image_id=p["image_id"], x=float(p["x"]),
                                      y=float(p["y"]), label=p["label"],
                                      kind=p.get("kind")) for p in data["points"]]
        except (KeyError, TypeError) as exc:
            raise AnnotationFormatError(f"missing or malformed field: {exc}") from exc
        return cls(images=images, points=points).validate()


def save_annotations(path, aset: AnnotationSet) -> None:
    Path(path).write_text(json.dumps(aset.to_dict(), indent=2, sort_keys=True) + "\n")


def load_annotations(path, format: str = "points_json") -> AnnotationSet:
    """Read an annotation file.

    ``points_json`` files already carry points; ``boxes_json`` files carry
    {x, y, w, h} boxes that are reduced to their centers. Raises
    FileNotFoundError for a missing file, AnnotationFormatError for broken
    content, AnnotationBoundsError for out-of-image points.
    """
    if format not in ("points_json", "boxes_json"):
        raise ValueError(f"unknown annotation format {format!r}")
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationFormatError(f"invalid JSON in {path}: {exc}") from exc
    if format == "boxes_json":
        try:
            points = [{"image_id": b["image_id"],
                       "x": float(b["x"]) + float(b["w"]) / 2.0,
                       "y": float(b["y"]) + float(b["h"]) / 2.0,
                       "label": b["label"]} for b in data["boxes"]]
        except (KeyError, TypeError) as exc:
            raise AnnotationFormatError(f"missing or malformed field: {exc}") from exc
        data = {"images": data["images"], "points": points}
    return AnnotationSet.from_dict(data)
