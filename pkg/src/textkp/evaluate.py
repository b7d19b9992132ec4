"""IoU matching and precision / recall / F-score.

Detection file, one image per line::

    {"image": "img_0.png",
     "detections": [{"polygon": [[x, y], ...], "score": 0.97,
                     "keypoints": [[x, y], ...]}]}

``keypoints`` is optional and only consumed by rectification.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._polygon import as_points, rasterize, signed_area
from .annotations import TextAnnotation, load_annotations
from .rectify import DetectionPolygon


class EvaluationError(ValueError):
    pass


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class MatchReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    det_verdicts: list[str] = field(default_factory=list)  # "TP" | "FP" | "ignored"
    gt_verdicts: list[str] = field(default_factory=list)  # "matched" | "FN" | "ignored"

    @property
    def precision(self) -> float:
        return prf(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return prf(self.tp, self.fp, self.fn)[1]

    @property
    def fscore(self) -> float:
        return prf(self.tp, self.fp, self.fn)[2]

    def __add__(self, other: "MatchReport") -> "MatchReport":
        return MatchReport(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.det_verdicts + other.det_verdicts,
            self.gt_verdicts + other.gt_verdicts,
        )

    def summary(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "ignored": self.det_verdicts.count("ignored"),
            "precision": self.precision,
            "recall": self.recall,
            "fscore": self.fscore,
        }


def _vertices(poly) -> np.ndarray:
    if isinstance(poly, DetectionPolygon):
        return as_points(poly.vertices)
    if isinstance(poly, TextAnnotation):
        return as_points(poly.polygon)
    return as_points(poly)


def polygon_iou(a, b, grid_scale: float = 1.0) -> float:
    """IoU by even-odd sampling at pixel centers of a ``1/grid_scale`` grid."""
    va, vb = _vertices(a), _vertices(b)
    if abs(signed_area(va)) == 0 or abs(signed_area(vb)) == 0:
        warnings.warn("degenerate polygon in IoU; returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    lo_a, hi_a = va.min(axis=0), va.max(axis=0)
    lo_b, hi_b = vb.min(axis=0), vb.max(axis=0)
    if np.any(hi_a < lo_b) or np.any(hi_b < lo_a):
        return 0.0
    lo = np.minimum(lo_a, lo_b)
    hi = np.maximum(hi_a, hi_b)
    g = float(grid_scale)
    jx = np.arange(math.floor(lo[0] * g), math.ceil(hi[0] * g))
    iy = np.arange(math.floor(lo[1] * g), math.ceil(hi[1] * g))
    xs = (jx + 0.5) / g
    ys = (iy + 0.5) / g
    ma = rasterize(va, xs, ys)
    mb = rasterize(vb, xs, ys)
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 0.0
    return np.count_nonzero(ma & mb) / union


def match(
    detections: Sequence,
    gts: Sequence[TextAnnotation],
    iou_threshold: float = 0.5,
    grid_scale: float = 4.0,
) -> MatchReport:
    """Greedy one-to-one matching in descending IoU.

    Pairs need IoU strictly above ``iou_threshold``. Detections whose only
    matches are illegible ground truths are ignored.
    """
    pairs = []
    for di, det in enumerate(detections):
        for gi, gt in enumerate(gts):
            iou = polygon_iou(det, gt, grid_scale)
            if iou > iou_threshold:
                pairs.append((-iou, di, gi))
    pairs.sort()

    det_state = [None] * len(detections)
    gt_state = ["ignored" if gt.illegible else None for gt in gts]
    for _, di, gi in pairs:
        if gts[gi].illegible:
            continue
        if det_state[di] is None and gt_state[gi] is None:
            det_state[di] = "TP"
            gt_state[gi] = "matched"

    legible_hit = {di for _, di, gi in pairs if not gts[gi].illegible}
    illegible_hit = {di for _, di, gi in pairs if gts[gi].illegible}
    for di in range(len(detections)):
        if det_state[di] is None:
            if di not in legible_hit and di in illegible_hit:
                det_state[di] = "ignored"
            else:
                det_state[di] = "FP"
    gt_state = [s if s is not None else "FN" for s in gt_state]
    return MatchReport(
        tp=det_state.count("TP"),
        fp=det_state.count("FP"),
        fn=gt_state.count("FN"),
        det_verdicts=det_state,
        gt_verdicts=gt_state,
    )


def detection_to_json(det: DetectionPolygon, keypoints=None) -> dict:
    out = {"polygon": [[x, y] for x, y in det.vertices], "score": det.score}
    if keypoints is not None:
        out["keypoints"] = [[float(x), float(y)] for x, y in keypoints]
    return out


def save_detections(
    per_image: Iterable[tuple[str, Sequence[dict]]], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for image, dets in per_image:
            fh.write(json.dumps({"image": image, "detections": list(dets)}))
            fh.write("\n")


def load_detections(path: str | Path) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                dets = [
                    {
                        "polygon": [(float(x), float(y)) for x, y in d["polygon"]],
                        "score": float(d.get("score", 1.0)),
                        "keypoints": (
                            [(float(x), float(y)) for x, y in d["keypoints"]]
                            if "keypoints" in d
                            else None
                        ),
                    }
                    for d in obj["detections"]
                ]
                image = str(obj["image"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise EvaluationError(f"{path}: line {lineno}: {exc!r}") from None
            out.setdefault(image, []).extend(dets)
    return out


def evaluate_dataset(
    det_file: str | Path,
    gt_file: str | Path,
    iou_threshold: float = 0.5,
    grid_scale: float = 4.0,
) -> MatchReport:
    """Micro-averaged report over all ground-truth images."""
    gts = load_annotations(gt_file)
    dets = load_detections(det_file)
    known = {rec.image_path for rec in gts}
    unknown = sorted(set(dets) - known)
    if unknown:
        raise EvaluationError(f"detections reference unknown images: {unknown[:5]}")
    total = MatchReport()
    for rec in gts:
        polys = [DetectionPolygon(tuple(d["polygon"]), d["score"]) for d in dets.get(rec.image_path, [])]
        total = total + match(polys, rec.instances, iou_threshold, grid_scale)
    return total


def write_csv(report: MatchReport, path: str | Path, extra: Mapping[str, object] | None = None) -> None:
    row = dict(report.summary())
    if extra:
        row.update(extra)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)
