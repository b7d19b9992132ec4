"""Annotation data model and the JSON-lines annotation file format.

One image per line::

    {"image": "img_0.png", "width": 320, "height": 240,
     "instances": [{"polygon": [[x, y], ...], "transcription": "CAMEL",
                    "illegible": false}]}

Polygons have ``2k`` vertices: ``1..k`` trace the upper boundary left to
right, ``k+1..2k`` trace the lower boundary right to left.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ._polygon import is_simple

Point = tuple[float, float]


class AnnotationError(ValueError):
    """Raised for malformed or invalid annotation content."""


@dataclass(frozen=True)
class TextAnnotation:
    polygon: tuple[Point, ...]
    transcription: str
    illegible: bool = False

    @property
    def half(self) -> int:
        return len(self.polygon) // 2

    @property
    def upper(self) -> tuple[Point, ...]:
        return self.polygon[: self.half]

    @property
    def lower(self) -> tuple[Point, ...]:
        """Lower boundary re-ordered left to right."""
        return tuple(reversed(self.polygon[self.half :]))

    @property
    def n_chars(self) -> int:
        return len(self.transcription)

    def validate(self) -> None:
        n = len(self.polygon)
        if n % 2:
            raise AnnotationError(f"odd vertex count ({n})")
        if n < 4:
            raise AnnotationError(f"polygon needs at least 4 vertices, got {n}")
        for x, y in self.polygon:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise AnnotationError("non-finite vertex coordinate")
        if not is_simple(self.polygon):
            raise AnnotationError("polygon is not simple (self-intersecting or degenerate)")
        if not self.illegible and self.n_chars < 1:
            raise AnnotationError("legible instance with empty transcription")


@dataclass(frozen=True)
class ImageRecord:
    image_path: str
    width: int
    height: int
    instances: tuple[TextAnnotation, ...] = field(default_factory=tuple)

    def to_json(self) -> dict:
        return {
            "image": self.image_path,
            "width": self.width,
            "height": self.height,
            "instances": [
                {
                    "polygon": [[x, y] for x, y in ann.polygon],
                    "transcription": ann.transcription,
                    "illegible": ann.illegible,
                }
                for ann in self.instances
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ImageRecord":
        width, height = int(obj["width"]), int(obj["height"])
        if width < 1 or height < 1:
            raise AnnotationError(f"invalid image size {width}x{height}")
        instances = []
        for k, inst in enumerate(obj.get("instances", [])):
            polygon = tuple(
                (
                    min(max(float(x), 0.0), float(width)),
                    min(max(float(y), 0.0), float(height)),
                )
                for x, y in inst["polygon"]
            )
            ann = TextAnnotation(
                polygon=polygon,
                transcription=str(inst.get("transcription", "")),
                illegible=bool(inst.get("illegible", False)),
            )
            try:
                ann.validate()
            except AnnotationError as exc:
                raise AnnotationError(f"instance {k}: {exc}") from None
            instances.append(ann)
        return cls(str(obj["image"]), width, height, tuple(instances))


def load_annotations(path: str | Path) -> list[ImageRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(ImageRecord.from_json(obj))
            except json.JSONDecodeError as exc:
                raise AnnotationError(f"line {lineno}: parse error: {exc.msg}") from None
            except AnnotationError as exc:
                raise AnnotationError(f"line {lineno}: {exc}") from None
            except (KeyError, TypeError, ValueError) as exc:
                raise AnnotationError(f"line {lineno}: malformed record: {exc!r}") from None
    return records


def save_annotations(records: Iterable[ImageRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False))
            fh.write("\n")
