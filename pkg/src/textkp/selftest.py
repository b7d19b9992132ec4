"""Synthetic oracle suite behind ``textkp selftest``."""

from __future__ import annotations

import contextlib
import hashlib
import io
import math
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .associate import link_candidates
from .decode import DetectedKeypoint
from .evaluate import evaluate_dataset, match, polygon_iou, prf
from .geometry import KeypointKind, LinkSet
from .labelmaps import read_stack, write_stack
from .losses import LossConfig, keypoint_loss, link_loss, mask_loss, numeric_grad, total_loss
from .rectify import DetectionPolygon, bilinear_sample, fit_tps, rectify_patch
from .synthgen import (
    CurvedBand,
    SceneSpec,
    apply_homography,
    generate_suite,
    homography,
    paint,
    sine_centerline,
    pattern_card,
)

STRAIGHT = {"rect": 1.0, "rotated": 1.0, "perspective": 1.0}
CURVED = {"sine": 1.0}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: Optional[float] = None  # wall time, kept out of the report text


def run_suite(cfg, workdir: Path, n_images: int, shape_mix=None, noise_sigma: float = 0.0,
              seed: int = 0):
    """synth -> gen-labels -> detect -> eval; returns (report, seconds)."""
    from .cli import cmd_detect, cmd_gen_labels

    spec = SceneSpec(seed=seed, shape_mix=dict(shape_mix)) if shape_mix else SceneSpec(seed=seed)
    workdir = Path(workdir)
    start = time.perf_counter()
    ann = generate_suite(spec, n_images, workdir / "images")
    run_cfg = replace(cfg, noise_sigma=noise_sigma)
    with contextlib.redirect_stdout(io.StringIO()):
        cmd_gen_labels(ann, workdir / "stacks", run_cfg)
        cmd_detect(workdir / "stacks", workdir / "detections.jsonl", run_cfg)
    report = evaluate_dataset(workdir / "detections.jsonl", ann, cfg.iou_threshold, cfg.grid_scale)
    return report, time.perf_counter() - start


def check_rectify_outputs(cfg, workdir: Path) -> CheckResult:
    from .cli import cmd_rectify
    from .evaluate import load_detections

    workdir = Path(workdir)
    with contextlib.redirect_stdout(io.StringIO()):
        code = cmd_rectify(workdir / "images", workdir / "detections.jsonl", workdir / "patches", cfg)
    n_det = sum(len(v) for v in load_detections(workdir / "detections.jsonl").values())
    n_png = len(list((workdir / "patches").glob("*.png")))
    return CheckResult("rectify detected instances", code == 0 and n_png == n_det,
                       f"{n_png} patches for {n_det} detections")


def _kp(x, y, right=None, left=None):
    return DetectedKeypoint((x, y), KeypointKind.CHARACTER, 1.0, LinkSet(left=left, right=right))


def check_association(ratio_threshold: float = 0.5) -> CheckResult:
    kp = _kp(10.0, 10.0, right=(20.0, 0.0))
    near = link_candidates(kp, [kp, _kp(35.0, 10.0)], "rightward", ratio_threshold)
    far = link_candidates(kp, [kp, _kp(90.0, 10.0)], "rightward", ratio_threshold)
    ok = near == 1 and far is None
    return CheckResult("association ratio rule", ok, f"ratio 0.2 -> {near}, ratio 0.75 -> {far}")


def check_tps(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_res = worst_aff = 0.0
    for _ in range(20):
        m = int(rng.integers(2, 9))
        src = rng.uniform(0, 300, size=(2 * m, 2))
        dst = src + rng.normal(0, 8, size=src.shape)
        t = fit_tps(src, dst)
        worst_res = max(worst_res, float(np.abs(t(src) - dst).max()))
        a = rng.normal(0, 1, size=(2, 2)) + np.eye(2)
        b = rng.uniform(-50, 50, size=2)
        t = fit_tps(src, src @ a.T + b)
        probes = rng.uniform(-50, 350, size=(100, 2))
        worst_aff = max(worst_aff, float(np.abs(t(probes) - (probes @ a.T + b)).max()))
    ok = worst_res < 1e-6 and worst_aff < 1e-6
    return CheckResult("TPS exactness", ok, f"max residual {worst_res:.2e}, affine error {worst_aff:.2e}")


def _straight_expected(pattern, h_t, w_t):
    h0, w0 = pattern.shape[:2]
    cc, rr = np.meshgrid(np.arange(w_t, dtype=float), np.arange(h_t, dtype=float))
    return bilinear_sample(pattern, cc * w0 / w_t - 0.5, rr * h0 / h_t - 0.5)


def sine_rectification_error(n_chars: int = 10, char_width: float = 24.0, height: float = 24.0) -> float:
    """Mean abs difference (intensity levels) after bending and rectifying."""
    pattern = pattern_card(n_chars, char_width, height)
    h0, w0 = pattern.shape[:2]
    band = CurvedBand(sine_centerline(40.0, 120.0, 20.0, 260.0, 0.4, w0), h0)
    canvas = np.full((260, 340, 3), 100.0)
    paint(canvas, pattern, band.inverse, (0, 0, 340, 260), (band.length, band.height))
    image = np.rint(canvas).astype(np.uint8)
    # one landmark pair per keypoint station: ends plus character centers
    stations = np.concatenate([[0.0], (np.arange(n_chars) + 0.5) / n_chars, [1.0]]) * band.length
    upper = band.forward(stations, np.zeros_like(stations))
    lower = band.forward(stations, np.full_like(stations, float(h0)))
    patch = rectify_patch(image, list(zip(map(tuple, upper), map(tuple, lower)))).pixels
    expected = np.clip(np.rint(_straight_expected(pattern, *patch.shape[:2])), 0, 255)
    return float(np.abs(patch.astype(float) - expected).mean())


PERSPECTIVE_QUAD = ((40.0, 40.0), (260.0, 50.0), (260.0, 76.0), (40.0, 70.0))


def perspective_rectification_error(quad=PERSPECTIVE_QUAD) -> float:
    pattern = pattern_card(8, 28.0, 30.0)
    h0, w0 = pattern.shape[:2]
    to_pattern = homography(quad, [(0, 0), (w0, 0), (w0, h0), (0, h0)])
    canvas = np.full((120, 300, 3), 100.0)
    paint(canvas, pattern, lambda x, y: apply_homography(to_pattern, x, y), (0, 0, 300, 120), (w0, h0))
    image = np.rint(canvas).astype(np.uint8)
    patch = rectify_patch(image, [(quad[0], quad[3]), (quad[1], quad[2])]).pixels
    h_t, w_t = patch.shape[:2]
    to_image = homography([(0, 0), (w_t, 0), (w_t, h_t), (0, h_t)], quad)
    cc, rr = np.meshgrid(np.arange(w_t, dtype=float), np.arange(h_t, dtype=float))
    x, y = apply_homography(to_image, cc, rr)
    oracle = np.clip(np.rint(bilinear_sample(image, x, y)), 0, 255)
    return float(np.abs(patch.astype(float) - oracle).mean())


def _rel_error(a: np.ndarray, n: np.ndarray, mask: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
    return float((np.abs(a - n) / denom)[mask].max())


def check_losses(seed: int = 0) -> CheckResult:
    cfg = LossConfig()
    single = keypoint_loss(np.array([[0.5]]), np.array([[1.0]]), cfg).value
    ok_single = abs(single - (-0.25 * math.log(0.5))) < 1e-6
    ok_total = total_loss((1.0, 1.0, 1.0), cfg) == 1.0 + 0.1 * 1.0 + 1.0 * 1.0
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        y = rng.uniform(0, 0.9, size=(3, 8, 8))
        y[rng.random(size=y.shape) < 0.05] = 1.0
        y[0, 0, 0] = 1.0
        p = rng.uniform(0.05, 0.95, size=y.shape)
        g = keypoint_loss(p, y, cfg).grad
        n = numeric_grad(lambda q: keypoint_loss(q, y, cfg).value, p)
        worst = max(worst, _rel_error(g, n, np.ones_like(g, bool)))

        t = (rng.random(size=(8, 8)) < 0.5).astype(float)
        p = rng.uniform(0.05, 0.95, size=(8, 8))
        g = mask_loss(p, t, cfg).grad
        n = numeric_grad(lambda q: mask_loss(q, t, cfg).value, p)
        worst = max(worst, _rel_error(g, n, np.ones_like(g, bool)))

        t = rng.normal(0, 2, size=(8, 8, 8))
        p = t + rng.normal(0, 1.5, size=t.shape)
        kink = np.abs(np.abs(p - t) - 1.0) < 1e-2
        p[kink] += 0.05
        v = rng.random(size=(8, 8)) < 0.5
        v[0, 0] = True
        g = link_loss(p, t, v).grad
        n = numeric_grad(lambda q: link_loss(q, t, v).value, p)
        vv = np.broadcast_to(v, p.shape)
        worst = max(worst, _rel_error(g, n, vv))
        if np.any(g[~vv] != 0):
            worst = math.inf
    ok = ok_single and ok_total and worst < 1e-4
    return CheckResult("loss values and gradients", ok,
                       f"focal single-pixel {single:.6f}, total(1,1,1)={total_loss((1, 1, 1))}, "
                       f"max FD relative error {worst:.2e}")


def check_evaluation() -> CheckResult:
    p, r, f = prf(8, 2, 4)
    ok_prf = abs(p - 0.8) < 1e-12 and abs(r - 2 / 3) < 1e-12 and abs(f - 0.7272727) < 1e-6
    from .annotations import TextAnnotation

    gt = TextAnnotation(((0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)), "X")
    d1 = DetectionPolygon(((0.0, 0.0), (100.0, 0.0), (100.0, 80.0), (0.0, 80.0)))
    d2 = DetectionPolygon(((0.0, 0.0), (100.0, 0.0), (100.0, 60.0), (0.0, 60.0)))
    rep = match([d2, d1], [gt])
    ok_dup = (rep.tp, rep.fp, rep.fn) == (1, 1, 0) and rep.det_verdicts == ["FP", "TP"]
    sq = [(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)]
    iou = polygon_iou(sq, [(x + 50.0, y) for x, y in sq], grid_scale=4.0)
    ok_iou = abs(iou - 1 / 3) <= 0.02
    return CheckResult("evaluation protocol", ok_prf and ok_dup and ok_iou,
                       f"P/R/F {p:.4f}/{r:.4f}/{f:.4f}, duplicate TP/FP {rep.tp}/{rep.fp}, "
                       f"offset-square IoU {iou:.4f}")


def _digest(folder: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(folder.glob("*.kptl")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def check_determinism(cfg, workdir: Path, n_images: int = 6) -> CheckResult:
    from .cli import cmd_gen_labels

    ann = generate_suite(SceneSpec(seed=cfg.seed + 7), n_images, workdir / "images")
    digests = []
    with contextlib.redirect_stdout(io.StringIO()):
        for k, workers in enumerate((1, 1, 2)):
            out = workdir / f"stacks{k}"
            cmd_gen_labels(ann, out, replace(cfg, worker_count=workers))
            digests.append(_digest(out))
    first = sorted((workdir / "stacks0").glob("*.kptl"))[0]
    stack = read_stack(first)
    write_stack(stack, workdir / "again.kptl")
    bit_exact = (workdir / "again.kptl").read_bytes() == first.read_bytes() and read_stack(
        workdir / "again.kptl"
    ) == stack
    ok = len(set(digests)) == 1 and bit_exact
    return CheckResult("format determinism", ok,
                       f"runs identical: {digests[0] == digests[1]}, workers 1 vs 2 identical: "
                       f"{digests[0] == digests[2]}, read/write bit-exact: {bit_exact}")


def run_selftest(cfg, n_images: int = 50) -> list[CheckResult]:
    results = []
    with tempfile.TemporaryDirectory(prefix="textkp-selftest-") as tmp:
        tmp = Path(tmp)
        rep, secs = run_suite(cfg, tmp / "clean", n_images, seed=cfg.seed)
        ok = min(rep.precision, rep.recall, rep.fscore) >= 0.99 and secs < 60
        results.append(CheckResult("oracle roundtrip, clean", ok,
                                   f"P={rep.precision:.4f} R={rep.recall:.4f} F={rep.fscore:.4f}, "
                                   f"runtime limit 60 s", secs))
        results.append(check_rectify_outputs(cfg, tmp / "clean"))
        rep, _ = run_suite(cfg, tmp / "noisy", n_images, noise_sigma=0.05, seed=cfg.seed)
        results.append(CheckResult("oracle roundtrip, noise 0.05", rep.fscore >= 0.95, f"F={rep.fscore:.4f}"))
        curved, _ = run_suite(cfg, tmp / "curved", n_images, CURVED, 0.05, seed=cfg.seed)
        straight, _ = run_suite(cfg, tmp / "straight", n_images, STRAIGHT, 0.05, seed=cfg.seed)
        gap = abs(curved.fscore - straight.fscore)
        results.append(CheckResult("curved vs straight robustness", gap <= 0.02,
                                   f"F curved {curved.fscore:.4f}, straight {straight.fscore:.4f}, gap {gap:.4f}"))
        results.append(check_association(cfg.ratio_threshold))
        results.append(check_tps(cfg.seed))
        err = sine_rectification_error()
        results.append(CheckResult("sine-bend rectification", err <= 5.0, f"mean abs diff {err:.3f}/255"))
        err = perspective_rectification_error()
        results.append(CheckResult("perspective vs homography", err <= 2.0, f"mean abs diff {err:.3f}/255"))
        results.append(check_losses(cfg.seed))
        results.append(check_evaluation())
        results.append(check_determinism(cfg, tmp / "determinism"))
    return results
