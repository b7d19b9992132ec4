"""Ground-truth keypoints, landmark pairs and links derived from polygons."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._polygon import cumulative_length, nearest_on_polyline, point_at_length
from .annotations import Point, TextAnnotation

Vector = tuple[float, float]

MIN_THICKNESS = 2.0


class GeometryError(ValueError):
    pass


class KeypointKind(enum.IntEnum):
    CHARACTER = 1
    LEFT = 2
    RIGHT = 3

    @property
    def channel(self) -> int:
        """Heatmap channel holding this keypoint kind."""
        return int(self)


@dataclass(frozen=True)
class CenterLine:
    points: np.ndarray
    cumulative_length: np.ndarray

    @property
    def length(self) -> float:
        return float(self.cumulative_length[-1])


@dataclass(frozen=True)
class Keypoint:
    position: Point
    kind: KeypointKind


@dataclass(frozen=True)
class LandmarkPair:
    upper: Point
    lower: Point
    owner: int


@dataclass(frozen=True)
class LinkSet:
    left: Optional[Vector] = None
    right: Optional[Vector] = None
    up: Optional[Vector] = None
    down: Optional[Vector] = None

    def get(self, name: str) -> Optional[Vector]:
        return getattr(self, name)


LINK_NAMES = ("left", "right", "up", "down")


@dataclass(frozen=True)
class LabelBundle:
    """Labels of one text instance, keypoints in centerline order."""

    polygon: tuple[Point, ...]
    keypoints: tuple[Keypoint, ...]
    landmarks: tuple[LandmarkPair, ...]
    links: tuple[LinkSet, ...]
    penalty: tuple[float, ...]


def _tup(p) -> Point:
    return (float(p[0]), float(p[1]))


def derive_centerline(ann: TextAnnotation) -> CenterLine:
    upper = np.asarray(ann.upper, dtype=np.float64)
    lower = np.asarray(ann.lower, dtype=np.float64)
    if len(upper) < 2 or len(upper) != len(lower):
        raise GeometryError("polygon must have k >= 2 upper and k lower vertices")
    if np.hypot(*(upper - lower).T).max() <= 1e-9:
        raise GeometryError("degenerate polygon: upper and lower boundaries coincide")
    mid = 0.5 * (upper + lower)
    keep = np.concatenate([[True], np.hypot(*np.diff(mid, axis=0).T) > 1e-12])
    mid = mid[keep]
    cum = cumulative_length(mid)
    if len(mid) < 2 or cum[-1] <= 0:
        raise GeometryError("degenerate polygon: zero-length centerline")
    return CenterLine(mid, cum)


def place_keypoints(cl: CenterLine, n: int) -> list[Keypoint]:
    if n < 1:
        raise ValueError("character count must be >= 1")
    L = cl.length
    if L <= 0:
        raise GeometryError("zero-length centerline")
    kps = [Keypoint(_tup(cl.points[0]), KeypointKind.LEFT)]
    for i in range(n):
        pos = point_at_length(cl.points, cl.cumulative_length, (i + 0.5) * L / n)
        kps.append(Keypoint(_tup(pos), KeypointKind.CHARACTER))
    kps.append(Keypoint(_tup(cl.points[-1]), KeypointKind.RIGHT))
    return kps


def place_landmarks(ann: TextAnnotation, keypoints: list[Keypoint]) -> list[LandmarkPair]:
    upper = np.asarray(ann.upper, dtype=np.float64)
    lower = np.asarray(ann.lower, dtype=np.float64)
    pairs = []
    for idx, kp in enumerate(keypoints):
        u, _ = nearest_on_polyline(kp.position, upper)
        l, _ = nearest_on_polyline(kp.position, lower)
        pairs.append(LandmarkPair(_tup(u), _tup(l), idx))
    return pairs


def build_links(keypoints: list[Keypoint], landmarks: list[LandmarkPair]) -> list[LinkSet]:
    by_owner = {lm.owner: lm for lm in landmarks}
    pos = [np.asarray(kp.position) for kp in keypoints]
    links = []
    for i, kp in enumerate(keypoints):
        left = right = up = down = None
        if kp.kind is not KeypointKind.LEFT and i > 0:
            left = _tup(pos[i - 1] - pos[i])
        if kp.kind is not KeypointKind.RIGHT and i + 1 < len(keypoints):
            right = _tup(pos[i + 1] - pos[i])
        lm = by_owner.get(i)
        if lm is not None:
            up = _tup(np.asarray(lm.upper) - pos[i])
            down = _tup(np.asarray(lm.lower) - pos[i])
        links.append(LinkSet(left, right, up, down))
    return links


def build_label_bundle(
    ann: TextAnnotation,
    end_landmarks: bool = True,
    min_thickness: float = MIN_THICKNESS,
) -> Optional[LabelBundle]:
    """Keypoints, landmarks and links of one instance; ``None`` if illegible.

    With ``end_landmarks=False`` the Left/Right keypoints get no landmark
    pair and hence no vertical links; their penalty distance is still
    measured.
    """
    if ann.illegible:
        return None
    cl = derive_centerline(ann)
    kps = place_keypoints(cl, ann.n_chars)
    pairs = place_landmarks(ann, kps)
    penalty = tuple(
        float(np.hypot(lm.upper[0] - lm.lower[0], lm.upper[1] - lm.lower[1])) for lm in pairs
    )
    if min(penalty) < min_thickness:
        raise GeometryError(
            f"instance too thin: landmark distance {min(penalty):.3f} < {min_thickness}"
        )
    if not end_landmarks:
        pairs = [lm for lm in pairs if kps[lm.owner].kind is KeypointKind.CHARACTER]
    links = build_links(kps, pairs)
    return LabelBundle(
        polygon=tuple(ann.polygon),
        keypoints=tuple(kps),
        landmarks=tuple(pairs),
        links=tuple(links),
        penalty=penalty,
    )
