import json
import random

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from textkp.annotations import ImageRecord, TextAnnotation, save_annotations
from textkp.evaluate import (
    EvaluationError,
    MatchReport,
    detection_to_json,
    evaluate_dataset,
    load_detections,
    match,
    polygon_iou,
    prf,
    save_detections,
)
from textkp.rectify import DetectionPolygon


def square(x0, y0, s):
    return [(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]


def rect(x0, y0, w, h):
    return [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)]


def _area(p):
    p = np.asarray(p, float)
    return 0.5 * abs(np.dot(p[:, 0], np.roll(p[:, 1], -1)) - np.dot(np.roll(p[:, 0], -1), p[:, 1]))


def _clip(subject, clipper):
    """Sutherland-Hodgman; clipper must be convex and counter-clockwise in (x, y)."""
    out = list(subject)
    for i in range(len(clipper)):
        a, b = np.asarray(clipper[i]), np.asarray(clipper[(i + 1) % len(clipper)])
        inp, out = out, []
        if not inp:
            break

        def inside(p):
            return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0

        def cross(p, q):
            p, q = np.asarray(p), np.asarray(q)
            d = q - p
            e = b - a
            t = ((a[0] - p[0]) * e[1] - (a[1] - p[1]) * e[0]) / (d[0] * e[1] - d[1] * e[0])
            return tuple(p + t * d)

        for j in range(len(inp)):
            cur, prev = inp[j], inp[j - 1]
            if inside(cur):
                if not inside(prev):
                    out.append(cross(prev, cur))
                out.append(cur)
            elif inside(prev):
                out.append(cross(prev, cur))
    return out


def _ccw(p):
    return p if _signed(p) > 0 else p[::-1]


def _signed(p):
    p = np.asarray(p, float)
    return 0.5 * (np.dot(p[:, 0], np.roll(p[:, 1], -1)) - np.dot(np.roll(p[:, 0], -1), p[:, 1]))


def _exact_convex_iou(a, b):
    inter = _clip(_ccw(a), _ccw(b))
    ia = _area(inter) if len(inter) >= 3 else 0.0
    return ia / (_area(a) + _area(b) - ia)


def _random_convex(rng, cx, cy, r):
    ang = np.sort(rng.uniform(0, 2 * np.pi, int(rng.integers(3, 9))))
    pts = np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], 1)
    hull = ConvexHull(pts)
    return [tuple(pts[i]) for i in hull.vertices]


def test_identical_is_one():
    assert polygon_iou(square(0, 0, 50), square(0, 0, 50), 4) == 1.0


def test_offset_squares_one_third():
    assert abs(polygon_iou(square(0, 0, 100), square(50, 0, 100), 4) - 1 / 3) <= 0.02


def test_disjoint_is_zero():
    assert polygon_iou(square(0, 0, 10), square(30, 30, 10), 4) == 0.0
    assert polygon_iou(square(0, 0, 10), square(5, 20, 10), 4) == 0.0


def test_degenerate_warns():
    with pytest.warns(RuntimeWarning):
        assert polygon_iou([(0, 0), (10, 0), (20, 0)], square(0, 0, 10)) == 0.0


def test_convex_clip_oracle():
    rng = np.random.default_rng(0)
    for _ in range(30):
        a = _random_convex(rng, 150, 150, rng.uniform(60, 120))
        b = _random_convex(rng, 150 + rng.uniform(-60, 60), 150 + rng.uniform(-60, 60), rng.uniform(60, 120))
        assert abs(polygon_iou(a, b, 4) - _exact_convex_iou(a, b)) < 0.02


def test_scale_convergence():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = _random_convex(rng, 200, 200, rng.uniform(100, 160))
        b = _random_convex(rng, 200 + rng.uniform(-50, 50), 200 + rng.uniform(-50, 50), rng.uniform(100, 160))
        assert abs(polygon_iou(a, b, 8) - polygon_iou(a, b, 4)) < 0.01


def test_prf_arithmetic():
    p, r, f = prf(8, 2, 4)
    assert p == pytest.approx(0.8) and r == pytest.approx(0.6667, abs=1e-4) and f == pytest.approx(0.7273, abs=1e-4)
    assert prf(0, 0, 0) == (0.0, 0.0, 0.0)


def _gt(poly, illegible=False):
    return TextAnnotation(tuple(poly), "" if illegible else "X", illegible)


def test_single_match():
    rep = match([DetectionPolygon(tuple(square(0, 0, 40)))], [_gt(square(0, 0, 40))])
    assert (rep.tp, rep.fp, rep.fn) == (1, 0, 0)
    assert rep.precision == rep.recall == rep.fscore == 1.0


def test_duplicate_detection_is_false_positive():
    gt = _gt(rect(0, 0, 100, 100))
    d_hi = DetectionPolygon(tuple(rect(0, 0, 100, 80)))  # IoU 0.8
    d_lo = DetectionPolygon(tuple(rect(0, 0, 100, 60)))  # IoU 0.6
    rep = match([d_lo, d_hi], [gt])
    assert (rep.tp, rep.fp, rep.fn) == (1, 1, 0)
    assert rep.det_verdicts == ["FP", "TP"]
    assert rep.precision == 0.5 and rep.recall == 1.0 and rep.fscore == pytest.approx(2 / 3)


def test_threshold_is_strict():
    gt = _gt(rect(0, 0, 100, 100))
    half = DetectionPolygon(tuple(rect(0, 0, 100, 50)))  # IoU exactly 0.5
    assert match([half], [gt]).tp == 0


def test_illegible_only_match_is_ignored():
    rep = match([DetectionPolygon(tuple(square(0, 0, 40)))], [_gt(square(0, 0, 40), illegible=True)])
    assert (rep.tp, rep.fp, rep.fn) == (0, 0, 0)
    assert rep.det_verdicts == ["ignored"] and rep.gt_verdicts == ["ignored"]


def test_unmatched_counts():
    rep = match([DetectionPolygon(tuple(square(200, 200, 10)))], [_gt(square(0, 0, 40))])
    assert (rep.tp, rep.fp, rep.fn) == (0, 1, 1)


def test_equal_iou_tie_goes_to_lower_det_index():
    gt = _gt(rect(0, 0, 100, 100))
    a = DetectionPolygon(tuple(rect(0, 0, 100, 80)))
    b = DetectionPolygon(tuple(rect(0, 20, 100, 80)))
    assert match([a, b], [gt]).det_verdicts == ["TP", "FP"]
    assert match([b, a], [gt]).det_verdicts == ["TP", "FP"]


def test_match_permutation_stable_counts():
    rng = random.Random(3)
    gts = [_gt(square(60 * i, 0, 50)) for i in range(5)]
    dets = [DetectionPolygon(tuple(square(60 * i + rng.uniform(-8, 8), rng.uniform(-8, 8), 50))) for i in range(5)]
    dets.append(DetectionPolygon(tuple(square(1000, 1000, 5))))
    ref = match(dets, gts)
    for _ in range(10):
        order = list(range(len(dets)))
        rng.shuffle(order)
        rep = match([dets[i] for i in order], gts)
        assert (rep.tp, rep.fp, rep.fn) == (ref.tp, ref.fp, ref.fn)
        assert [rep.det_verdicts[order.index(i)] for i in range(len(dets))] == ref.det_verdicts


def test_report_addition():
    total = MatchReport(1, 0, 0, ["TP"], ["matched"]) + MatchReport(1, 1, 0, ["TP", "FP"], ["matched"])
    assert (total.tp, total.fp, total.fn) == (2, 1, 0)


def _files(tmp_path, dets_by_image):
    gt = tmp_path / "gt.jsonl"
    save_annotations(
        [
            ImageRecord("a.png", 200, 200, (_gt(square(10, 10, 40)),)),
            ImageRecord("b.png", 200, 200, (_gt(square(100, 100, 40)),)),
        ],
        gt,
    )
    det = tmp_path / "det.jsonl"
    save_detections([(k, [detection_to_json(DetectionPolygon(tuple(p)), None) for p in v]) for k, v in dets_by_image.items()], det)
    return det, gt


def test_dataset_micro_average(tmp_path):
    det, gt = _files(tmp_path, {"a.png": [square(10, 10, 40)], "b.png": [square(100, 100, 40)]})
    rep = evaluate_dataset(det, gt)
    assert rep.tp == 2 and rep.fscore == 1.0


def test_missing_image_in_detections_counts_fn(tmp_path):
    det, gt = _files(tmp_path, {"a.png": [square(10, 10, 40)]})
    rep = evaluate_dataset(det, gt)
    assert (rep.tp, rep.fn) == (1, 1)


def test_unknown_image_is_error(tmp_path):
    det, gt = _files(tmp_path, {"zzz.png": [square(10, 10, 40)]})
    with pytest.raises(EvaluationError, match="unknown"):
        evaluate_dataset(det, gt)


def test_detection_file_roundtrip(tmp_path):
    p = tmp_path / "d.jsonl"
    det = DetectionPolygon(((0.0, 0.0), (5.0, 0.0), (5.0, 5.0), (0.0, 5.0)), 0.75)
    save_detections([("x.png", [detection_to_json(det, [(1.0, 2.0), (3.0, 4.0)])])], p)
    line = json.loads(p.read_text())
    assert line["image"] == "x.png" and line["detections"][0]["score"] == 0.75
    loaded = load_detections(p)["x.png"][0]
    assert loaded["polygon"] == list(det.vertices) and loaded["keypoints"] == [(1.0, 2.0), (3.0, 4.0)]


def test_malformed_detection_file(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"image": "a.png"}\n')
    with pytest.raises(EvaluationError, match="line 1"):
        load_detections(p)
