"""Deterministic synthetic text scenes for closed-loop testing.

Each instance is a band carrying a geometric test pattern (one light/dark
block per character, tinted top and bottom thirds) mapped into one of four
shapes: axis-aligned rectangle, rotated rectangle, perspective quadrilateral
or sine-curved band with 14 polygon vertices.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.spatial import cKDTree

from .annotations import ImageRecord, TextAnnotation, save_annotations
from .rectify import bilinear_sample

SHAPES = ("rect", "rotated", "perspective", "sine")
SHAPE_ALIASES = {"curved": "sine", "sine-band": "sine"}
ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
MAX_ATTEMPTS = 1000


class SynthesisError(RuntimeError):
    pass


@dataclass
class SceneSpec:
    seed: int = 0
    width: int = 320
    height: int = 240
    instances: tuple[int, int] = (1, 4)
    shape_mix: dict[str, float] = field(
        default_factory=lambda: {"rect": 0.25, "rotated": 0.25, "perspective": 0.25, "sine": 0.25}
    )
    text_length: tuple[int, int] = (3, 9)
    band_height: tuple[float, float] = (16.0, 30.0)
    char_aspect: tuple[float, float] = (0.9, 1.2)
    amplitude: tuple[float, float] = (4.0, 14.0)
    wavelength: tuple[float, float] = (120.0, 260.0)
    max_rotation: float = 30.0
    keystone: tuple[float, float] = (0.75, 1.25)
    margin: float = 10.0
    min_radius: float = 4.0  # sine bands: radius of curvature >= min_radius * band height

    def __post_init__(self):
        mix: dict[str, float] = {}
        for key, weight in self.shape_mix.items():
            name = SHAPE_ALIASES.get(key, key)
            mix[name] = mix.get(name, 0.0) + float(weight)
        self.shape_mix = mix

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        lo, hi = self.instances
        if lo < 0 or hi < lo:
            raise ValueError("bad instance count range")
        unknown = set(self.shape_mix) - set(SHAPES)
        if unknown:
            raise ValueError(f"unknown shapes {sorted(unknown)}")
        if sum(self.shape_mix.values()) <= 0:
            raise ValueError("shape_mix needs a positive weight")
        if self.text_length[0] < 1:
            raise ValueError("text length must be >= 1")

    @classmethod
    def from_dict(cls, obj: dict) -> "SceneSpec":
        obj = dict(obj)
        for key in ("instances", "text_length", "band_height", "char_aspect",
                    "amplitude", "wavelength", "keystone"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)


# -- test pattern -----------------------------------------------------------

def pattern_card(n_chars: int, char_width: float, height: float, blur: float = 1.0) -> np.ndarray:
    """Straight pattern image, ``ceil(height) x ceil(n * char_width) x 3``."""
    w = max(1, int(math.ceil(n_chars * char_width)))
    h = max(1, int(math.ceil(height)))
    u = np.arange(w) + 0.5
    v = np.arange(h) + 0.5
    block = (np.floor(u / char_width).astype(int) % 2).astype(np.float64)
    base = 40.0 + 180.0 * block[None, :] * np.ones((h, 1))
    img = np.repeat(base[:, :, None], 3, axis=2)
    band = np.floor(3 * v / height).astype(int)
    img[band == 0, :, 0] += 35.0
    img[band == 2, :, 2] += 35.0
    img = np.clip(img, 0, 255)
    if blur > 0:
        img = ndimage.gaussian_filter(img, sigma=(blur, blur, 0), mode="nearest")
    return img


def paint(
    canvas: np.ndarray,
    pattern: np.ndarray,
    inverse: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]],
    bbox: tuple[int, int, int, int],
    extent: tuple[float, float],
) -> None:
    """Fill ``canvas`` pixels whose pattern coordinates fall inside ``extent``.

    ``inverse(x, y)`` maps image points to pattern coordinates ``(u, v)``.
    """
    x0, y0, x1, y1 = bbox
    h, w = canvas.shape[:2]
    x0, y0, x1, y1 = max(x0, 0), max(y0, 0), min(x1, w), min(y1, h)
    if x1 <= x0 or y1 <= y0:
        return
    xx, yy = np.meshgrid(np.arange(x0, x1, dtype=np.float64), np.arange(y0, y1, dtype=np.float64))
    u, v = inverse(xx.ravel(), yy.ravel())
    inside = (u >= 0) & (u < extent[0]) & (v >= 0) & (v < extent[1])
    if not inside.any():
        return
    # pattern pixel (i, j) covers [j, j+1) x [i, i+1), its center is j + 0.5
    vals = bilinear_sample(pattern, u[inside] - 0.5, v[inside] - 0.5)
    region = canvas[y0:y1, x0:x1].reshape(-1, canvas.shape[2])
    region[inside] = vals
    canvas[y0:y1, x0:x1] = region.reshape(y1 - y0, x1 - x0, canvas.shape[2])


# -- warps --------------------------------------------------------------------

def homography(src, dst) -> np.ndarray:
    """3x3 projective map taking the 4 ``src`` points to ``dst``."""
    a = []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, _, vt = np.linalg.svd(np.asarray(a, dtype=np.float64))
    hm = vt[-1].reshape(3, 3)
    return hm / hm[2, 2]


def apply_homography(hm: np.ndarray, x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = hm[2, 0] * x + hm[2, 1] * y + hm[2, 2]
    return (hm[0, 0] * x + hm[0, 1] * y + hm[0, 2]) / w, (hm[1, 0] * x + hm[1, 1] * y + hm[1, 2]) / w


@dataclass
class CurvedBand:
    """Band of height ``h`` around an arc-length sampled centerline.

    Pattern coordinate ``u`` is arc length, ``v`` runs 0 (upper edge) to ``h``
    along the downward normal.
    """

    samples: np.ndarray  # dense centerline, (N, 2)
    height: float

    def __post_init__(self):
        d = np.diff(self.samples, axis=0)
        seg = np.hypot(*d.T)
        self.arclen = np.concatenate([[0.0], np.cumsum(seg)])
        t = np.gradient(self.samples, self.arclen, axis=0)
        t /= np.hypot(*t.T)[:, None]
        self.normals = np.stack([-t[:, 1], t[:, 0]], axis=1)
        self._tree = cKDTree(self.samples)

    @property
    def length(self) -> float:
        return float(self.arclen[-1])

    def forward(self, u, v) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        cx = np.interp(u, self.arclen, self.samples[:, 0])
        cy = np.interp(u, self.arclen, self.samples[:, 1])
        nx = np.interp(u, self.arclen, self.normals[:, 0])
        ny = np.interp(u, self.arclen, self.normals[:, 1])
        norm = np.hypot(nx, ny)
        off = v - 0.5 * self.height
        return np.stack([cx + off * nx / norm, cy + off * ny / norm], axis=-1)

    def inverse(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        pts = np.stack([np.asarray(x, float), np.asarray(y, float)], axis=1)
        _, k = self._tree.query(pts)
        # refine on the neighbouring segment
        k0 = np.clip(k - 1, 0, len(self.samples) - 2)
        best_u = np.zeros(len(pts))
        best_v = np.zeros(len(pts))
        best_d = np.full(len(pts), np.inf)
        for off in (0, 1):
            i = np.clip(k0 + off, 0, len(self.samples) - 2)
            a, b = self.samples[i], self.samples[i + 1]
            ab = b - a
            t = np.einsum("ij,ij->i", pts - a, ab) / np.einsum("ij,ij->i", ab, ab)
            t_c = np.clip(t, 0.0, 1.0)
            foot = a + t_c[:, None] * ab
            dist = np.hypot(*(pts - foot).T)
            seg_len = self.arclen[i + 1] - self.arclen[i]
            u = self.arclen[i] + t * seg_len
            nrm = np.stack([-ab[:, 1], ab[:, 0]], axis=1) / np.hypot(*ab.T)[:, None]
            v = np.einsum("ij,ij->i", pts - (a + t[:, None] * ab), nrm) + 0.5 * self.height
            better = dist < best_d
            best_d = np.where(better, dist, best_d)
            best_u = np.where(better, u, best_u)
            best_v = np.where(better, v, best_v)
        return best_u, best_v


def sine_centerline(x0, y0, amplitude, wavelength, phase, arc_target, samples=2000) -> np.ndarray:
    """Dense samples of ``y = y0 + A sin(2 pi t / wavelength + phase)`` with given arc length."""
    k = 2 * math.pi / wavelength
    t = np.linspace(0.0, 2.0 * arc_target, 8 * samples)
    dy = amplitude * k * np.cos(k * t + phase)
    arclen = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(t), np.diff(t) * 0.5 * (dy[1:] + dy[:-1])))])
    t_end = float(np.interp(arc_target, arclen, t))
    tt = np.linspace(0.0, t_end, samples)
    return np.stack([x0 + tt, y0 + amplitude * np.sin(k * tt + phase)], axis=1)


# -- scene --------------------------------------------------------------------

@dataclass
class _Instance:
    polygon: list[tuple[float, float]]
    transcription: str
    pattern: np.ndarray
    inverse: Callable
    extent: tuple[float, float]


def _bbox(poly, pad: float) -> tuple[float, float, float, float]:
    a = np.asarray(poly)
    return a[:, 0].min() - pad, a[:, 1].min() - pad, a[:, 0].max() + pad, a[:, 1].max() + pad


def _boxes_overlap(a, b) -> bool:
    return not (a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1])


def _make_instance(rng: np.random.Generator, spec: SceneSpec, shape: str) -> _Instance:
    n = int(rng.integers(spec.text_length[0], spec.text_length[1] + 1))
    text = "".join(ALPHABET[i] for i in rng.integers(0, 26, size=n))
    h = float(rng.uniform(*spec.band_height))
    cw = h * float(rng.uniform(*spec.char_aspect))
    length = n * cw
    pattern = pattern_card(n, cw, h)
    extent = (length, h)
    W, H = spec.width, spec.height

    if shape == "rect":
        x0 = float(rng.uniform(0, max(W - length, 1)))
        y0 = float(rng.uniform(0, max(H - h, 1)))
        poly = [(x0, y0), (x0 + length, y0), (x0 + length, y0 + h), (x0, y0 + h)]
        inverse = lambda x, y, x0=x0, y0=y0: (x - x0, y - y0)
    elif shape == "rotated":
        theta = math.radians(float(rng.uniform(-spec.max_rotation, spec.max_rotation)))
        cx = float(rng.uniform(0, W))
        cy = float(rng.uniform(0, H))
        c, s = math.cos(theta), math.sin(theta)

        def fwd(u, v):
            du, dv = u - length / 2, v - h / 2
            return (cx + c * du - s * dv, cy + s * du + c * dv)

        poly = [fwd(0, 0), fwd(length, 0), fwd(length, h), fwd(0, h)]

        def inverse(x, y):
            dx, dy = x - cx, y - cy
            return (c * dx + s * dy + length / 2, -s * dx + c * dy + h / 2)
    elif shape == "perspective":
        k = float(rng.uniform(*spec.keystone))
        skew = float(rng.uniform(-0.3, 0.3)) * h
        x0 = float(rng.uniform(0, W))
        y0 = float(rng.uniform(0, H))
        hr = h * k
        poly = [
            (x0, y0),
            (x0 + length, y0 + skew - (hr - h) / 2),
            (x0 + length, y0 + skew + (hr + h) / 2),
            (x0, y0 + h),
        ]
        rect = [(0, 0), (length, 0), (length, h), (0, h)]
        to_pattern = homography(poly, rect)
        inverse = lambda x, y, m=to_pattern: apply_homography(m, x, y)
    elif shape == "sine":
        for _ in range(MAX_ATTEMPTS):
            amp = float(rng.uniform(*spec.amplitude))
            lam = float(rng.uniform(*spec.wavelength))
            if amp * (2 * math.pi / lam) ** 2 * spec.min_radius * h <= 1.0:
                break
        else:
            raise SynthesisError("no sine parameters satisfy the curvature limit")
        phase = float(rng.uniform(0, 2 * math.pi))
        x0 = float(rng.uniform(0, W))
        y0 = float(rng.uniform(0, H))
        band = CurvedBand(sine_centerline(x0, y0, amp, lam, phase, length), h)
        extent = (band.length, h)
        stations = np.linspace(0.0, band.length, 7)
        upper = band.forward(stations, np.zeros(7))
        lower = band.forward(stations[::-1], np.full(7, h))
        poly = [tuple(map(float, p)) for p in np.concatenate([upper, lower])]
        inverse = band.inverse
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return _Instance([(float(x), float(y)) for x, y in poly], text, pattern, inverse, extent)


def _background(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    base = rng.uniform(90, 150, size=3)
    noise = rng.normal(0.0, 6.0, size=(height, width, 1))
    return np.clip(base[None, None, :] + noise, 0, 255)


def generate_scene(spec: SceneSpec, image_name: Optional[str] = None) -> tuple[ImageRecord, np.ndarray]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shapes = [s for s in SHAPES if spec.shape_mix.get(s, 0) > 0]
    probs = np.array([spec.shape_mix[s] for s in shapes], dtype=np.float64)
    probs /= probs.sum()
    count = int(rng.integers(spec.instances[0], spec.instances[1] + 1))

    placed: list[_Instance] = []
    boxes = []
    m = spec.margin
    for _ in range(count):
        for _attempt in range(MAX_ATTEMPTS):
            shape = shapes[int(rng.choice(len(shapes), p=probs))]
            inst = _make_instance(rng, spec, shape)
            bx = _bbox(inst.polygon, 0.0)
            if bx[0] < m or bx[1] < m or bx[2] > spec.width - m or bx[3] > spec.height - m:
                continue
            padded = _bbox(inst.polygon, m / 2)
            if any(_boxes_overlap(padded, b) for b in boxes):
                continue
            placed.append(inst)
            boxes.append(padded)
            break
        else:
            raise SynthesisError(
                f"could not place instance {len(placed)} after {MAX_ATTEMPTS} attempts; "
                "lower the instance count or text size"
            )

    canvas = _background(rng, spec.width, spec.height)
    for inst in placed:
        bx = _bbox(inst.polygon, 2.0)
        bbox = (int(math.floor(bx[0])), int(math.floor(bx[1])), int(math.ceil(bx[2])) + 1, int(math.ceil(bx[3])) + 1)
        paint(canvas, inst.pattern, inst.inverse, bbox, inst.extent)
    image = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)

    anns = []
    for inst in placed:
        ann = TextAnnotation(tuple(inst.polygon), inst.transcription, False)
        ann.validate()
        anns.append(ann)
    name = image_name or f"synth_{spec.seed}.png"
    return ImageRecord(name, spec.width, spec.height, tuple(anns)), image


def suite_seeds(seed: int, n_images: int) -> list[int]:
    state = np.random.SeedSequence(seed).generate_state(max(n_images, 1), dtype=np.uint32)
    return [int(s) for s in state[:n_images]]


def generate_suite(spec: SceneSpec, n_images: int, out_dir: str | Path) -> Path:
    """Write ``n_images`` PNGs, ``annotations.jsonl`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = [
        {"image": f"img_{i:04d}.png", "seed": s} for i, s in enumerate(suite_seeds(spec.seed, n_images))
    ]
    manifest = {"spec": asdict(spec), "images": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return generate_from_manifest(out / "manifest.json", out)


def generate_from_manifest(manifest_path: str | Path, out_dir: str | Path) -> Path:
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = SceneSpec.from_dict(manifest["spec"])
    records = []
    for entry in manifest["images"]:
        spec = SceneSpec.from_dict({**asdict(base), "seed": entry["seed"]})
        rec, img = generate_scene(spec, entry["image"])
        Image.fromarray(img).save(out / entry["image"])
        records.append(rec)
    ann_path = out / "annotations.jsonl"
    save_annotations(records, ann_path)
    return ann_path
