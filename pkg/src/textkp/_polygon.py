"""Low-level planar polygon and polyline helpers shared across modules.

Coordinates are ``(x, y)`` with ``y`` pointing down. Arrays are ``(N, 2)``
float64.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (N, 2) point array, got shape {arr.shape}")
    return arr


def signed_area(vertices) -> float:
    v = as_points(vertices)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p) -> bool:
    return (
        min(a[0], b[0]) - _EPS <= p[0] <= max(a[0], b[0]) + _EPS
        and min(a[1], b[1]) - _EPS <= p[1] <= max(a[1], b[1]) + _EPS
    )


def segments_intersect(p1, p2, q1, q2) -> bool:
    """Closed-segment intersection test, touching counts."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > _EPS and d2 < -_EPS) or (d1 < -_EPS and d2 > _EPS)) and (
        (d3 > _EPS and d4 < -_EPS) or (d3 < -_EPS and d4 > _EPS)
    ):
        return True
    if abs(d1) <= _EPS and _on_segment(q1, q2, p1):
        return True
    if abs(d2) <= _EPS and _on_segment(q1, q2, p2):
        return True
    if abs(d3) <= _EPS and _on_segment(p1, p2, q1):
        return True
    if abs(d4) <= _EPS and _on_segment(p1, p2, q2):
        return True
    return False


def _drop_repeats(v: np.ndarray) -> np.ndarray:
    keep = np.any(np.abs(v - np.roll(v, 1, axis=0)) > _EPS, axis=1)
    if not keep.any():
        return v[:1]
    return v[keep]


def is_simple(vertices) -> bool:
    """True when the closed polygon has no self-intersections.

    Repeated consecutive vertices are ignored. Adjacent edges may share
    their common vertex but must not fold back onto each other.
    """
    v = _drop_repeats(as_points(vertices))
    n = len(v)
    if n < 3:
        return False
    edges = [(v[i], v[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        a1, a2 = edges[i]
        for j in range(i + 1, n):
            b1, b2 = edges[j]
            adjacent = j == i + 1 or (i == 0 and j == n - 1)
            if not adjacent:
                if segments_intersect(a1, a2, b1, b2):
                    return False
                continue
            # shared vertex: fold-back means the far endpoint lies on the other edge
            if j == i + 1:
                shared, far_a, far_b = a2, a1, b2
            else:
                shared, far_a, far_b = a1, a2, b1
            da, db = far_a - shared, far_b - shared
            cross = da[0] * db[1] - da[1] * db[0]
            if abs(cross) <= _EPS * max(1.0, np.hypot(*da) * np.hypot(*db)):
                if np.dot(da, db) > 0:
                    return False
    return abs(signed_area(v)) > _EPS


def rasterize(vertices, xs, ys) -> np.ndarray:
    """Even-odd point-in-polygon test on the sample grid ``xs`` by ``ys``.

    Returns a ``(len(ys), len(xs))`` boolean array. A sample is inside when a
    rightward ray from it crosses the boundary an odd number of times, with
    the half-open rule ``(y0 > y) != (y1 > y)`` deciding edge crossings.
    """
    v = as_points(vertices)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    out = np.zeros((len(ys), len(xs)), dtype=bool)
    if len(v) < 3 or len(xs) == 0 or len(ys) == 0:
        return out
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    lo, hi = np.minimum(y0, y1), np.maximum(y0, y1)
    rows = np.nonzero((ys >= lo.min()) & (ys < hi.max()))[0]
    for r in rows:
        y = ys[r]
        crossing = (y0 > y) != (y1 > y)
        if not crossing.any():
            continue
        a0, a1 = x0[crossing], x1[crossing]
        b0, b1 = y0[crossing], y1[crossing]
        xint = np.sort(a0 + (y - b0) * (a1 - a0) / (b1 - b0))
        above = len(xint) - np.searchsorted(xint, xs, side="right")
        out[r] = (above & 1).astype(bool)
    return out


def cumulative_length(polyline) -> np.ndarray:
    p = as_points(polyline)
    seg = np.hypot(*np.diff(p, axis=0).T) if len(p) > 1 else np.zeros(0)
    return np.concatenate([[0.0], np.cumsum(seg)])


def point_at_length(polyline, cumlen, s: float) -> np.ndarray:
    """Linear interpolation of the polyline at arc length ``s``."""
    p = as_points(polyline)
    cumlen = np.asarray(cumlen, dtype=np.float64)
    s = min(max(float(s), 0.0), float(cumlen[-1]))
    i = int(np.searchsorted(cumlen, s, side="right")) - 1
    i = min(max(i, 0), len(p) - 2)
    span = cumlen[i + 1] - cumlen[i]
    t = 0.0 if span <= 0 else (s - cumlen[i]) / span
    return p[i] + t * (p[i + 1] - p[i])


def nearest_on_polyline(point, polyline) -> tuple[np.ndarray, int]:
    """Closest point on an open polyline and the index of its segment.

    Ties go to the lower segment index.
    """
    p = np.asarray(point, dtype=np.float64)
    line = as_points(polyline)
    a, b = line[:-1], line[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.einsum("ij,ij->i", p - a, ab) / np.where(denom > 0, denom, 1.0)
    t = np.clip(np.where(denom > 0, t, 0.0), 0.0, 1.0)
    feet = a + t[:, None] * ab
    dist = np.hypot(*(feet - p).T)
    k = int(np.argmin(dist))  # argmin returns the first minimum
    return feet[k], k
