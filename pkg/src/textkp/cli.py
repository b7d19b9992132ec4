"""Command-line entry point: ``textkp <subcommand>``.

Exit codes: 0 success, 1 check or processing failure, 2 usage/format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import zlib
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .annotations import AnnotationError, ImageRecord, load_annotations
from .evaluate import (
    EvaluationError,
    detection_to_json,
    evaluate_dataset,
    load_detections,
    save_detections,
    write_csv,
)
from .geometry import LandmarkPair
from .labelmaps import StackFormatError, perturb_stack, read_stack, write_stack
from .pipeline import default_workers, detect_stack, ordered_map, record_bundles
from .labelmaps import render_labels
from .rectify import RectifyError, TpsError, extend_landmarks, rectify_patch

log = logging.getLogger("textkp")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
INDEX_NAME = "index.jsonl"


@dataclass
class RunConfig:
    downsample: int = 1
    peak_threshold: float = 0.3
    ratio_threshold: float = 0.5
    extension_factor: float = 0.1
    iou_threshold: float = 0.5
    grid_scale: float = 4.0
    noise_sigma: float = 0.0
    seed: int = 0
    worker_count: int = field(default_factory=default_workers)
    smoothing: float = 1.0
    suppress: float = 0.0
    mutual: bool = False
    end_landmarks: bool = True

    def validate(self) -> None:
        problems = []
        if self.downsample < 1:
            problems.append("downsample must be >= 1")
        if not 0 < self.peak_threshold < 1:
            problems.append("peak_threshold must lie in (0, 1)")
        if self.ratio_threshold <= 0:
            problems.append("ratio_threshold must be > 0")
        if self.extension_factor < 0:
            problems.append("extension_factor must be >= 0")
        if not 0 <= self.iou_threshold < 1:
            problems.append("iou_threshold must lie in [0, 1)")
        if self.grid_scale <= 0:
            problems.append("grid_scale must be > 0")
        if self.noise_sigma < 0:
            problems.append("noise_sigma must be >= 0")
        if self.worker_count < 1:
            problems.append("worker_count must be >= 1")
        if self.smoothing < 0 or self.suppress < 0:
            problems.append("smoothing and suppress must be >= 0")
        if problems:
            raise ValueError("; ".join(problems))


def _coerce(name: str, raw: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if kind in ("bool", bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if kind in ("int", int):
        return int(raw)
    return float(raw)


def read_config_file(path: str | Path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys may use dashes."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value.strip("\"'"))
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    env = os.environ.get("TEXTKP_WORKERS")
    if env:
        values["worker_count"] = int(env)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# -- gen-labels ---------------------------------------------------------------

def _stack_name(record: ImageRecord) -> str:
    return Path(record.image_path).stem + ".kptl"


def _gen_one(job):
    record, out_path, downsample, end_landmarks = job
    stats = Counter()
    try:
        bundles = record_bundles(record, end_landmarks, stats)
        stack = render_labels(bundles, record.width, record.height, downsample)
        write_stack(stack, out_path)
    except (ValueError, OSError) as exc:
        return record.image_path, None, str(exc)
    kps = sum(len(b.keypoints) for b in bundles)
    return record.image_path, (len(bundles), kps, dict(stats)), None


def cmd_gen_labels(annotations: str | Path, out_dir: str | Path, cfg: RunConfig) -> int:
    records = load_annotations(annotations)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [_stack_name(r) for r in records]
    dupes = sorted(n for n, c in Counter(names).items() if c > 1)
    if dupes:
        raise AnnotationError(f"image stems collide: {dupes[:5]}")
    jobs = [(r, out / n, cfg.downsample, cfg.end_landmarks) for r, n in zip(records, names)]
    results = ordered_map(_gen_one, jobs, cfg.worker_count)

    failed = 0
    n_inst = n_kp = 0
    with open(out / INDEX_NAME, "w", encoding="utf-8", newline="\n") as fh:
        for name, (image, summary, err) in zip(names, results):
            if err is not None:
                failed += 1
                log.error("%s: %s", image, err)
                continue
            inst, kps, stats = summary
            if inst == 0 and stats.get("illegible"):
                log.warning("%s: only illegible text, wrote an empty stack", image)
            if stats.get("rejected_geometry"):
                log.warning("%s: %d instance(s) rejected as degenerate", image, stats["rejected_geometry"])
            n_inst += inst
            n_kp += kps
            fh.write(json.dumps({"stack": name, "image": image}) + "\n")
    print(f"gen-labels: {len(records) - failed} stacks, {n_inst} instances, {n_kp} keypoints")
    return EXIT_FAIL if failed else EXIT_OK


# -- detect -------------------------------------------------------------------

def _stack_seed(seed: int, name: str) -> int:
    state = np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)
    return int(state[0])


def _detect_one(job):
    path, cfg = job
    try:
        stack = read_stack(path)
    except (StackFormatError, OSError) as exc:
        return None, str(exc), {}
    if cfg.noise_sigma > 0:
        stack = perturb_stack(stack, cfg.noise_sigma, _stack_seed(cfg.seed, Path(path).name))
    stats = Counter()
    dets = detect_stack(
        stack,
        cfg.peak_threshold,
        cfg.ratio_threshold,
        suppress=cfg.suppress,
        smoothing=cfg.smoothing,
        mutual=cfg.mutual,
        stats=stats,
    )
    return [detection_to_json(d.polygon, d.keypoints) for d in dets], None, dict(stats)


def cmd_detect(stacks_dir: str | Path, out_det_file: str | Path, cfg: RunConfig) -> int:
    sdir = Path(stacks_dir)
    paths = sorted(sdir.glob("*.kptl"))
    image_of = {}
    index = sdir / INDEX_NAME
    if index.exists():
        for line in index.read_text(encoding="utf-8").splitlines():
            if line.strip():
                entry = json.loads(line)
                image_of[entry["stack"]] = entry["image"]
    results = ordered_map(_detect_one, [(p, cfg) for p in paths], cfg.worker_count)
    rows, failed, total = [], 0, Counter()
    for p, (dets, err, stats) in zip(paths, results):
        if err is not None:
            failed += 1
            log.warning("skipping %s: %s", p.name, err)
            continue
        total.update(stats)
        rows.append((image_of.get(p.name, p.stem + ".png"), dets))
    save_detections(rows, out_det_file)
    n_det = sum(len(d) for _, d in rows)
    print(f"detect: {len(rows)} stacks, {n_det} detections; diagnostics {dict(sorted(total.items()))}")
    if paths and failed == len(paths):
        return EXIT_FAIL
    return EXIT_OK


# -- rectify ------------------------------------------------------------------

def _pairs_from_detection(det: dict) -> tuple[list[LandmarkPair], list]:
    verts = det["polygon"]
    m = len(verts) // 2
    upper = verts[:m]
    lower = list(reversed(verts[m:]))
    pairs = [LandmarkPair(tuple(u), tuple(l), i) for i, (u, l) in enumerate(zip(upper, lower))]
    kps = det.get("keypoints")
    if not kps or len(kps) != m:
        kps = [((u[0] + l[0]) / 2, (u[1] + l[1]) / 2) for u, l in zip(upper, lower)]
    return pairs, kps


def cmd_rectify(image_dir: str | Path, det_file: str | Path, out_dir: str | Path, cfg: RunConfig) -> int:
    from PIL import Image

    dets = load_detections(det_file)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = skipped = 0
    for image, items in dets.items():
        path = Path(image_dir) / image
        if not path.exists():
            log.error("image not found: %s", path)
            return EXIT_FAIL
        pixels = np.asarray(Image.open(path).convert("RGB"))
        for k, det in enumerate(items):
            pairs, kps = _pairs_from_detection(det)
            try:
                ext = extend_landmarks(pairs, kps, cfg.extension_factor)
                patch = rectify_patch(pixels, ext)
            except (RectifyError, TpsError) as exc:
                skipped += 1
                log.warning("%s instance %d skipped: %s", image, k, exc)
                continue
            Image.fromarray(patch.pixels).save(out / f"{Path(image).stem}_inst{k}.png")
            written += 1
    print(f"rectify: {written} patches written, {skipped} skipped")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------

def cmd_eval(det_file, gt_file, cfg: RunConfig, csv_path: Optional[str] = None) -> int:
    report = evaluate_dataset(det_file, gt_file, cfg.iou_threshold, cfg.grid_scale)
    print(json.dumps(report.summary(), sort_keys=True))
    if csv_path:
        write_csv(report, csv_path, {"iou_threshold": cfg.iou_threshold})
    return EXIT_OK


# -- selftest -----------------------------------------------------------------

def cmd_selftest(cfg: RunConfig, n_images: int = 50) -> int:
    from .selftest import run_selftest

    results = run_selftest(cfg, n_images)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
        if r.seconds is not None:
            print(f"  {r.name}: {r.seconds:.1f} s", file=sys.stderr)
    failed = [r for r in results if not r.passed]
    print(f"selftest: {len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


# -- argument parsing ---------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool", bool):
            p.add_argument(flag, dest=f.name, default=None, action=argparse.BooleanOptionalAction)
        else:
            conv = int if f.type in ("int", int) else float
            p.add_argument(flag, dest=f.name, type=conv, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="textkp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-labels", help="render KPTL label stacks from annotations")
    p.add_argument("annotations")
    p.add_argument("out_dir")
    _add_config_flags(p)

    p = sub.add_parser("detect", help="decode stacks into detection polygons")
    p.add_argument("stacks_dir")
    p.add_argument("out_det_file")
    _add_config_flags(p)

    p = sub.add_parser("rectify", help="warp detected instances to rectangles")
    p.add_argument("image_dir")
    p.add_argument("det_file")
    p.add_argument("out_dir")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="IoU evaluation of detections against annotations")
    p.add_argument("det_file")
    p.add_argument("gt_file")
    p.add_argument("--csv", dest="csv_path")
    _add_config_flags(p)

    p = sub.add_parser("selftest", help="run the synthetic oracle suite")
    p.add_argument("--images", type=int, default=50)
    _add_config_flags(p)

    p = sub.add_parser("synth", help="generate a synthetic annotated image suite")
    p.add_argument("out_dir")
    p.add_argument("--images", type=int, default=50)
    p.add_argument("--shapes", default="rect,rotated,perspective,sine",
                   help="comma-separated shape mix, equal weights")
    p.add_argument("--manifest", help="regenerate from an existing manifest.json")
    _add_config_flags(p)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
    except (ValueError, OSError) as exc:
        print(f"textkp: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "gen-labels":
            return cmd_gen_labels(args.annotations, args.out_dir, cfg)
        if args.command == "detect":
            return cmd_detect(args.stacks_dir, args.out_det_file, cfg)
        if args.command == "rectify":
            return cmd_rectify(args.image_dir, args.det_file, args.out_dir, cfg)
        if args.command == "eval":
            return cmd_eval(args.det_file, args.gt_file, cfg, args.csv_path)
        if args.command == "selftest":
            return cmd_selftest(cfg, args.images)
        if args.command == "synth":
            from .synthgen import SceneSpec, generate_from_manifest, generate_suite

            if args.manifest:
                path = generate_from_manifest(args.manifest, args.out_dir)
            else:
                shapes = [s.strip() for s in args.shapes.split(",") if s.strip()]
                spec = SceneSpec(seed=cfg.seed, shape_mix={s: 1.0 for s in shapes})
                path = generate_suite(spec, args.images, args.out_dir)
            print(f"synth: wrote {path}")
            return EXIT_OK
    except (AnnotationError, EvaluationError, StackFormatError) as exc:
        print(f"textkp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"textkp: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"textkp: I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"textkp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    parser.error(f"unknown command {args.command}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
