"""End-to-end helpers: annotations to stacks, stacks to detections."""

from __future__ import annotations

import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, TypeVar

from .annotations import ImageRecord, Point
from .associate import DEFAULT_RATIO, InstanceChain, build_instances
from .decode import DEFAULT_SMOOTHING, DEFAULT_SUPPRESS, DEFAULT_THRESHOLD, find_peaks
from .geometry import GeometryError, LabelBundle, build_label_bundle
from .labelmaps import HeatmapStack, render_labels
from .rectify import DetectionPolygon, PolygonError, RectifyError, chain_landmarks, make_polygon

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """``map`` over a process pool; results always come back in input order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def default_workers() -> int:
    return os.cpu_count() or 1


def record_bundles(
    record: ImageRecord, end_landmarks: bool = True, stats: Optional[Counter] = None
) -> list[LabelBundle]:
    stats = stats if stats is not None else Counter()
    bundles = []
    for ann in record.instances:
        if ann.illegible:
            stats["illegible"] += 1
            continue
        try:
            bundle = build_label_bundle(ann, end_landmarks=end_landmarks)
        except GeometryError:
            stats["rejected_geometry"] += 1
            continue
        bundles.append(bundle)
    return bundles


def record_stack(record: ImageRecord, downsample: int = 1, end_landmarks: bool = True) -> HeatmapStack:
    return render_labels(record_bundles(record, end_landmarks), record.width, record.height, downsample)


@dataclass(frozen=True)
class Detection:
    polygon: DetectionPolygon
    keypoints: tuple[Point, ...]


def chains_to_detections(
    chains: Iterable[InstanceChain], stats: Optional[Counter] = None
) -> list[Detection]:
    stats = stats if stats is not None else Counter()
    out = []
    for chain in chains:
        try:
            pairs = chain_landmarks(chain)
            poly = make_polygon(pairs, chain.score)
        except RectifyError:
            stats["missing_vertical_link"] += 1
            continue
        except PolygonError:
            stats["non_simple_polygon"] += 1
            continue
        out.append(Detection(poly, tuple(kp.position for kp in chain.keypoints)))
    return out


def detect_stack(
    stack: HeatmapStack,
    peak_threshold: float = DEFAULT_THRESHOLD,
    ratio_threshold: float = DEFAULT_RATIO,
    suppress: float = DEFAULT_SUPPRESS,
    smoothing: float = DEFAULT_SMOOTHING,
    mutual: bool = False,
    stats: Optional[Counter] = None,
) -> list[Detection]:
    stats = stats if stats is not None else Counter()
    peaks = find_peaks(stack, peak_threshold, smoothing, suppress)
    stats["keypoints"] += len(peaks)
    chains = build_instances(peaks, ratio_threshold, mutual=mutual, stats=stats)
    stats["chains"] += len(chains)
    return chains_to_detections(chains, stats)
