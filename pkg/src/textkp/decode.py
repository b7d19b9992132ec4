"""Keypoint candidates and their links from a heatmap stack."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .annotations import Point
from .geometry import LINK_NAMES, KeypointKind, LinkSet
from .labelmaps import LINK_CHANNELS, HeatmapStack

DEFAULT_THRESHOLD = 0.3
DEFAULT_SMOOTHING = 1.0
DEFAULT_SUPPRESS = 0.0


@dataclass(frozen=True)
class DetectedKeypoint:
    position: Point
    kind: KeypointKind
    score: float
    links: LinkSet


def _local_peaks(heat: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """(y, x) of 3x3 maxima above ``floor``, one per plateau, row-major."""
    padded = np.pad(heat, 1, mode="constant", constant_values=-np.inf)
    h, w = heat.shape
    nb = np.full(heat.shape, -np.inf, dtype=heat.dtype)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            if dy == 1 and dx == 1:
                continue
            np.maximum(nb, padded[dy : dy + h, dx : dx + w], out=nb)
    is_peak = (heat > floor) & (heat >= nb)
    if not is_peak.any():
        return np.zeros((0, 2), dtype=np.int64)
    # adjacent peaks are equal-valued, so 8-connected groups are plateaus
    labels, n = ndimage.label(is_peak, structure=np.ones((3, 3), dtype=int))
    flat = np.arange(heat.size).reshape(heat.shape)
    first = ndimage.minimum(flat, labels, index=np.arange(1, n + 1)).astype(np.int64)
    first.sort()
    return np.stack(np.unravel_index(first, heat.shape), axis=1)


def _read_links(stack: HeatmapStack, y: int, x: int, kind: KeypointKind) -> LinkSet:
    s = stack.downsample
    vecs = {}
    for t, name in enumerate(LINK_NAMES):
        if not stack.link_valid[t, y, x]:
            vecs[name] = None
            continue
        cx, cy = LINK_CHANNELS[name]
        vecs[name] = (float(stack.data[cx, y, x]) * s, float(stack.data[cy, y, x]) * s)
    if kind is KeypointKind.LEFT:
        vecs["left"] = None
    if kind is KeypointKind.RIGHT:
        vecs["right"] = None
    return LinkSet(**vecs)


def find_peaks(
    stack: HeatmapStack,
    threshold: float = DEFAULT_THRESHOLD,
    smoothing: float = DEFAULT_SMOOTHING,
    suppress: float = DEFAULT_SUPPRESS,
) -> list[DetectedKeypoint]:
    """Decode keypoints from the three heat channels.

    Candidates are 3x3 maxima (plateaus collapsed to their smallest
    ``(y, x)``) of the heat map after a Gaussian blur of ``smoothing`` map
    pixels; a candidate is kept when its raw heat is at least ``threshold``.
    Candidates are visited by descending raw heat and dropped when within
    ``suppress * sqrt(d) / s`` map pixels of an already kept peak of the same
    kind, ``d`` being the landmark distance from the kept peak's vertical
    links. ``smoothing=0, suppress=0`` is the plain 3x3 rule.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    s = stack.downsample
    out: list[DetectedKeypoint] = []
    for kind in KeypointKind:
        heat = stack.data[kind.channel]
        if smoothing > 0:
            ranked = ndimage.gaussian_filter(heat.astype(np.float64), smoothing, mode="constant")
        else:
            ranked = heat
        peaks = _local_peaks(ranked)
        if len(peaks) == 0:
            continue
        scores = heat[peaks[:, 0], peaks[:, 1]]
        keep = scores >= threshold
        peaks, scores = peaks[keep], scores[keep]
        smooth_scores = ranked[peaks[:, 0], peaks[:, 1]]
        # raw score first so that raising the threshold only ever removes peaks
        order = np.lexsort((-smooth_scores, -scores))
        kept: list[tuple[int, int, float]] = []
        kept_kps: list[DetectedKeypoint] = []
        for k in order:
            y, x = int(peaks[k, 0]), int(peaks[k, 1])
            if any((y - ky) ** 2 + (x - kx) ** 2 <= r * r for ky, kx, r in kept):
                continue
            links = _read_links(stack, y, x, kind)
            radius = 0.0
            if suppress > 0 and links.up is not None and links.down is not None:
                d = math.hypot(links.up[0] - links.down[0], links.up[1] - links.down[1])
                radius = suppress * math.sqrt(d) / s
            kept.append((y, x, radius))
            kept_kps.append(
                DetectedKeypoint((float(x * s), float(y * s)), kind, float(heat[y, x]), links)
            )
        kept_kps.sort(key=lambda kp: (kp.position[1], kp.position[0]))
        out.extend(kept_kps)
    return out
