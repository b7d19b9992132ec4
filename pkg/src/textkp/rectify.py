"""Detection polygons, thin-plate-spline fitting and text patch rectification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._polygon import cumulative_length, is_simple
from .annotations import Point
from .associate import InstanceChain
from .geometry import LandmarkPair

DEFAULT_EXTENSION = 0.1


class PolygonError(ValueError):
    pass


class TpsError(ValueError):
    pass


class DuplicatePointError(TpsError):
    pass


class SingularSystemError(TpsError):
    pass


class RectifyError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionPolygon:
    vertices: tuple[Point, ...]
    score: float = 1.0


@dataclass(frozen=True)
class RectifiedPatch:
    pixels: np.ndarray  # (H_t, W_t, C) uint8
    polygon: Optional[DetectionPolygon] = None


def _kernel(r2: np.ndarray) -> np.ndarray:
    """U(r) = r^2 log r^2 evaluated from squared distances, U(0) = 0."""
    out = np.zeros_like(r2)
    nz = r2 > 0
    out[nz] = r2[nz] * np.log(r2[nz])
    return out


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


@dataclass(frozen=True)
class TpsTransform:
    """Interpolating TPS map ``source -> target``.

    Kernel sums run in normalized source coordinates (centered, unit RMS
    radius); TPS interpolation commutes with that similarity.
    """

    source_points: np.ndarray
    target_points: np.ndarray
    weights: np.ndarray  # (n + 3, 2): kernel weights then affine [1, x, y]
    center: np.ndarray
    scale: float

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        src = (self.source_points - self.center) / self.scale
        n = len(src)
        out = np.empty((len(pts), 2))
        chunk = 65536
        for a in range(0, len(pts), chunk):
            q = (pts[a : a + chunk] - self.center) / self.scale
            k = _kernel(_sqdist(q, src))
            out[a : a + chunk] = (
                k @ self.weights[:n]
                + self.weights[n]
                + q[:, :1] * self.weights[n + 1]
                + q[:, 1:2] * self.weights[n + 2]
            )
        return out[0] if single else out


def fit_tps(source, target, regularization: float = 0.0) -> TpsTransform:
    src = np.asarray(source, dtype=np.float64)
    dst = np.asarray(target, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise TpsError("source and target must be matching (n, 2) arrays")
    n = len(src)
    if n < 3:
        raise SingularSystemError(f"need at least 3 control points, got {n}")
    center = src.mean(axis=0)
    scale = float(np.sqrt(np.mean(np.sum((src - center) ** 2, axis=1))))
    if scale == 0:
        raise DuplicatePointError("all source points coincide")
    sn = (src - center) / scale
    d2 = _sqdist(sn, sn)
    iu = np.triu_indices(n, 1)
    if np.min(d2[iu]) < 1e-20:
        i, j = (ix[np.argmin(d2[iu])] for ix in iu)
        raise DuplicatePointError(f"source points {i} and {j} coincide")
    sv = np.linalg.svd(sn - sn.mean(axis=0), compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise SingularSystemError("source points are collinear")

    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = _kernel(d2) + regularization * np.eye(n)
    system[:n, n] = 1.0
    system[:n, n + 1 :] = sn
    system[n, :n] = 1.0
    system[n + 1 :, :n] = sn.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = dst
    try:
        weights = np.linalg.solve(system, rhs)  # LU with partial pivoting
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"TPS system is singular: {exc}") from None
    if not np.all(np.isfinite(weights)):
        raise SingularSystemError("TPS solve produced non-finite coefficients")
    return TpsTransform(src, dst, weights, center, scale)


def _pair_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    up, lo = [], []
    for p in pairs:
        if isinstance(p, LandmarkPair):
            up.append(p.upper)
            lo.append(p.lower)
        else:
            up.append(p[0])
            lo.append(p[1])
    return np.asarray(up, dtype=np.float64).reshape(-1, 2), np.asarray(
        lo, dtype=np.float64
    ).reshape(-1, 2)


def chain_landmarks(chain: InstanceChain) -> list[LandmarkPair]:
    pairs = []
    for i, kp in enumerate(chain.keypoints):
        up, down = kp.links.up, kp.links.down
        if up is None or down is None:
            raise RectifyError(f"keypoint {i} of chain has no vertical link")
        x, y = kp.position
        pairs.append(LandmarkPair((x + up[0], y + up[1]), (x + down[0], y + down[1]), i))
    return pairs


def extend_landmarks(
    pairs: Sequence[LandmarkPair], keypoints: Sequence[Point], factor: float = DEFAULT_EXTENSION
) -> list[LandmarkPair]:
    """Push each landmark away from its keypoint by ``factor`` times the link."""
    if factor < 0:
        raise ValueError("extension factor must be >= 0")
    out = []
    for lm in pairs:
        kx, ky = keypoints[lm.owner]
        ux, uy = lm.upper
        lx, ly = lm.lower
        out.append(
            LandmarkPair(
                (ux + factor * (ux - kx), uy + factor * (uy - ky)),
                (lx + factor * (lx - kx), ly + factor * (ly - ky)),
                lm.owner,
            )
        )
    return out


def make_polygon(pairs, score: float = 1.0) -> DetectionPolygon:
    up, lo = _pair_arrays(pairs)
    if len(up) < 2:
        raise PolygonError(f"need at least 2 landmark pairs, got {len(up)}")
    verts = np.concatenate([up, lo[::-1]])
    if not is_simple(verts):
        raise PolygonError("landmark polygon is self-intersecting")
    return DetectionPolygon(tuple((float(x), float(y)) for x, y in verts), float(score))


def bilinear_sample(image: np.ndarray, x, y) -> np.ndarray:
    """Sample ``image`` at float coordinates, pixel ``(i, j)`` at ``(j, i)``.

    Coordinates outside the image clamp to the edge.
    """
    img = np.asarray(image)
    h, w = img.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    f = img.astype(np.float64)
    top = f[y0, x0] * (1 - fx) + f[y0, x1] * fx
    bot = f[y1, x0] * (1 - fx) + f[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def target_frame(pairs) -> tuple[int, int, np.ndarray, np.ndarray]:
    """Output size and rectangle control points for extended landmark pairs.

    Returns ``(H_t, W_t, upper_targets, lower_targets)``.
    """
    up, lo = _pair_arrays(pairs)
    if len(up) < 2:
        raise RectifyError("need at least 2 landmark pairs")
    mids = 0.5 * (up + lo)
    cum = cumulative_length(mids)
    h_t = int(round(float(np.mean(np.hypot(*(up - lo).T)))))
    w_t = int(round(float(cum[-1])))
    if h_t < 1 or w_t < 1:
        raise RectifyError(f"degenerate target size {w_t}x{h_t}")
    t = cum / cum[-1]
    up_t = np.stack([t * w_t, np.zeros_like(t)], axis=1)
    lo_t = np.stack([t * w_t, np.full_like(t, float(h_t))], axis=1)
    return h_t, w_t, up_t, lo_t


def rectify_patch(image: np.ndarray, pairs, regularization: float = 0.0) -> RectifiedPatch:
    """Warp the region spanned by (extended) landmark pairs to a rectangle.

    Output pixel ``(r, c)`` is the target point ``(c, r)``; it is pulled
    back through a TPS fitted from the target rectangle to the landmarks and
    bilinearly sampled from ``image``.
    """
    up, lo = _pair_arrays(pairs)
    h_t, w_t, up_t, lo_t = target_frame(pairs)
    inverse = fit_tps(
        np.concatenate([up_t, lo_t]), np.concatenate([up, lo]), regularization
    )
    cc, rr = np.meshgrid(np.arange(w_t, dtype=np.float64), np.arange(h_t, dtype=np.float64))
    src = inverse(np.stack([cc.ravel(), rr.ravel()], axis=1))
    vals = bilinear_sample(image, src[:, 0], src[:, 1])
    shape = (h_t, w_t) + np.asarray(image).shape[2:]
    pixels = np.clip(np.rint(vals), 0, 255).astype(np.uint8).reshape(shape)
    return RectifiedPatch(pixels)
