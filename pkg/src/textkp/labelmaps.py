"""Heatmap stacks: label rendering, the KPTL raster file, and noise injection.

Channel layout of a stack::

    0       text mask
    1, 2, 3 character / left / right keypoint heat
    4, 5    left link (dx, dy)      6, 7  right link
    8, 9    up link                 10, 11 down link

Map pixel ``(i, j)`` sits at image point ``(j * s, i * s)`` for downsample
``s``. Link values are stored in map pixels (image vector divided by ``s``).
``link_valid`` holds one plane per link type, in the order left, right,
up, down.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._polygon import rasterize
from .geometry import LINK_NAMES, LabelBundle

N_CHANNELS = 12
MASK = 0
HEAT_CHANNELS = (1, 2, 3)
LINK_CHANNELS = {"left": (4, 5), "right": (6, 7), "up": (8, 9), "down": (10, 11)}
LINK_RADIUS = 2.0
GAUSS_TRUNCATE = 4.0

MAGIC = b"KPTL"
VERSION = 1
_HEADER = struct.Struct("<4sHIIHHI")


class StackFormatError(ValueError):
    pass


@dataclass(eq=False)
class HeatmapStack:
    data: np.ndarray  # (12, H, W) float32
    link_valid: np.ndarray  # (4, H, W) bool
    downsample: int = 1

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def empty(cls, width: int, height: int, downsample: int = 1) -> "HeatmapStack":
        return cls(
            np.zeros((N_CHANNELS, height, width), dtype=np.float32),
            np.zeros((len(LINK_NAMES), height, width), dtype=bool),
            downsample,
        )

    def copy(self) -> "HeatmapStack":
        return HeatmapStack(self.data.copy(), self.link_valid.copy(), self.downsample)

    def __eq__(self, other) -> bool:
        if not isinstance(other, HeatmapStack):
            return NotImplemented
        return (
            self.downsample == other.downsample
            and self.data.shape == other.data.shape
            and np.array_equal(self.data.view(np.uint32), other.data.view(np.uint32))
            and np.array_equal(self.link_valid, other.link_valid)
        )


def map_size(width: int, height: int, downsample: int) -> tuple[int, int]:
    return -(-width // downsample), -(-height // downsample)


def render_labels(
    bundles: Sequence[LabelBundle], width: int, height: int, downsample: int = 1
) -> HeatmapStack:
    """Render instance labels into a stack at map resolution.

    Keypoint heat is a peak-1 Gaussian with sigma ``sqrt(d) / s`` combined by
    per-pixel max. Link targets fill a radius-2 disk around each keypoint;
    where disks overlap the nearest keypoint owns the pixel.
    """
    s = int(downsample)
    if s < 1:
        raise ValueError("downsample must be >= 1")
    wm, hm = map_size(width, height, s)
    stack = HeatmapStack.empty(wm, hm, s)
    data = stack.data

    xs = np.arange(wm, dtype=np.float64) * s
    ys = np.arange(hm, dtype=np.float64) * s
    mask = np.zeros((hm, wm), dtype=bool)
    for b in bundles:
        mask |= rasterize(b.polygon, xs, ys)
    data[MASK] = mask

    heat = np.zeros((4, hm, wm), dtype=np.float64)
    best = np.full((hm, wm), np.inf)
    owner = np.full((hm, wm), -1, dtype=np.int64)
    flat_links = []
    for bi, b in enumerate(bundles):
        for ki, kp in enumerate(b.keypoints):
            cx, cy = kp.position[0] / s, kp.position[1] / s
            px, py = int(round(cx)), int(round(cy))
            if not (0 <= px < wm and 0 <= py < hm):
                raise ValueError(
                    f"keypoint {ki} of instance {bi} at {kp.position} is outside the "
                    f"{wm}x{hm} map"
                )
            sigma = math.sqrt(b.penalty[ki]) / s
            r = int(math.ceil(GAUSS_TRUNCATE * sigma))
            x0, x1 = max(px - r, 0), min(px + r + 1, wm)
            y0, y1 = max(py - r, 0), min(py + r + 1, hm)
            gx = np.arange(x0, x1) - cx
            gy = np.arange(y0, y1) - cy
            g = np.exp(-(gy[:, None] ** 2 + gx[None, :] ** 2) / (2.0 * sigma * sigma))
            win = heat[kp.kind.channel, y0:y1, x0:x1]
            np.maximum(win, g, out=win)

            r2 = int(math.ceil(LINK_RADIUS))
            x0, x1 = max(px - r2, 0), min(px + r2 + 1, wm)
            y0, y1 = max(py - r2, 0), min(py + r2 + 1, hm)
            dx = np.arange(x0, x1) - cx
            dy = np.arange(y0, y1) - cy
            dist2 = dy[:, None] ** 2 + dx[None, :] ** 2
            take = (dist2 <= LINK_RADIUS**2) & (dist2 < best[y0:y1, x0:x1])
            best[y0:y1, x0:x1][take] = dist2[take]
            owner[y0:y1, x0:x1][take] = len(flat_links)
            flat_links.append(b.links[ki])

    data[1:4] = heat[1:4]
    if flat_links:
        table = np.zeros((len(flat_links), len(LINK_NAMES), 2))
        present = np.zeros((len(flat_links), len(LINK_NAMES)), dtype=bool)
        for n, ls in enumerate(flat_links):
            for t, name in enumerate(LINK_NAMES):
                vec = ls.get(name)
                if vec is not None:
                    table[n, t] = vec
                    present[n, t] = True
        hit = owner >= 0
        idx = owner[hit]
        for t, name in enumerate(LINK_NAMES):
            cx_, cy_ = LINK_CHANNELS[name]
            ok = present[idx, t]
            valid = np.zeros((hm, wm), dtype=bool)
            valid[hit] = ok
            stack.link_valid[t] = valid
            vx = np.zeros((hm, wm))
            vy = np.zeros((hm, wm))
            vx[hit] = np.where(ok, table[idx, t, 0], 0.0) / s
            vy[hit] = np.where(ok, table[idx, t, 1], 0.0) / s
            data[cx_] = vx
            data[cy_] = vy
    return stack


def write_stack(stack: HeatmapStack, path: str | Path) -> None:
    payload = _payload(stack)
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        stack.width,
        stack.height,
        stack.downsample,
        N_CHANNELS,
        zlib.crc32(payload) & 0xFFFFFFFF,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def _payload(stack: HeatmapStack) -> bytes:
    if stack.data.shape[0] != N_CHANNELS:
        raise ValueError(f"stack must have {N_CHANNELS} channels")
    planes = np.ascontiguousarray(stack.data, dtype="<f4").tobytes()
    bits = np.packbits(stack.link_valid.ravel(), bitorder="little").tobytes()
    return planes + bits


def read_stack(path: str | Path) -> HeatmapStack:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise StackFormatError(f"{path}: truncated header")
    magic, version, width, height, downsample, channels, crc = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise StackFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise StackFormatError(f"{path}: unsupported version {version}")
    if channels != N_CHANNELS:
        raise StackFormatError(f"{path}: expected {N_CHANNELS} channels, got {channels}")
    payload = raw[_HEADER.size :]
    plane = 4 * width * height
    nbits = len(LINK_NAMES) * width * height
    nvalid = (nbits + 7) // 8
    if len(payload) < plane * channels:
        k = len(payload) // plane if plane else 0
        raise StackFormatError(f"{path}: truncated plane in channel {k}")
    if len(payload) < plane * channels + nvalid:
        raise StackFormatError(f"{path}: truncated validity plane")
    if len(payload) > plane * channels + nvalid:
        raise StackFormatError(f"{path}: trailing bytes after payload")
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise StackFormatError(f"{path}: checksum mismatch")
    data = np.frombuffer(payload, dtype="<f4", count=channels * width * height)
    data = data.astype(np.float32).reshape(channels, height, width)
    bits = np.frombuffer(payload, dtype=np.uint8, offset=plane * channels)
    valid = np.unpackbits(bits, count=nbits, bitorder="little").astype(bool)
    return HeatmapStack(data, valid.reshape(len(LINK_NAMES), height, width), downsample)


def perturb_stack(stack: HeatmapStack, noise_sigma: float, seed: int) -> HeatmapStack:
    """Seeded Gaussian noise on heat channels (clamped) and on valid link pixels."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    out = stack.copy()
    if noise_sigma == 0:
        return out
    rng = np.random.default_rng(seed)
    shape = (stack.height, stack.width)
    for c in HEAT_CHANNELS:
        noisy = out.data[c] + rng.normal(0.0, noise_sigma, size=shape)
        out.data[c] = np.clip(noisy, 0.0, 1.0)
    for t, name in enumerate(LINK_NAMES):
        valid = out.link_valid[t]
        for c in LINK_CHANNELS[name]:
            noise = rng.normal(0.0, noise_sigma, size=shape)
            out.data[c] = np.where(valid, out.data[c] + noise, 0.0)
    return out
