import hashlib
import json
import logging

import numpy as np
import pytest
from PIL import Image

from textkp.annotations import ImageRecord, TextAnnotation, save_annotations
from textkp.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, _detect_one, main, resolve_config, build_parser
from textkp.labelmaps import HeatmapStack, read_stack, write_stack
from textkp.selftest import run_selftest
from textkp.synthgen import SceneSpec, generate_suite

from conftest import CAMEL_RECT


def _digests(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.glob("*.kptl"))}


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    root = tmp_path_factory.mktemp("suite")
    ann = generate_suite(SceneSpec(seed=7), 8, root / "images")
    return root, ann


def test_one_image_one_stack(tmp_path):
    ann = tmp_path / "a.jsonl"
    save_annotations([ImageRecord("one.png", 120, 40, (TextAnnotation(CAMEL_RECT, "CAMEL"),))], ann)
    assert main(["gen-labels", str(ann), str(tmp_path / "out")]) == EXIT_OK
    assert [p.name for p in (tmp_path / "out").glob("*.kptl")] == ["one.kptl"]


def test_illegible_only_writes_empty_stack(tmp_path, caplog):
    ann = tmp_path / "a.jsonl"
    save_annotations([ImageRecord("ill.png", 120, 40, (TextAnnotation(CAMEL_RECT, "", True),))], ann)
    with caplog.at_level(logging.WARNING, logger="textkp"):
        assert main(["gen-labels", str(ann), str(tmp_path / "out")]) == EXIT_OK
    assert "illegible" in caplog.text
    stack = read_stack(tmp_path / "out" / "ill.kptl")
    assert stack.data[1:4].max() == 0.0 and stack.data[0].max() == 0.0


def test_gen_labels_bytes_deterministic_and_worker_independent(tmp_path, suite):
    _, ann = suite
    runs = []
    for i, workers in enumerate(["1", "1", "3"]):
        out = tmp_path / f"run{i}"
        assert main(["gen-labels", str(ann), str(out), "--worker-count", workers]) == EXIT_OK
        runs.append(_digests(out))
    assert len(runs[0]) == 8
    assert runs[0] == runs[1] == runs[2]


def test_detect_end_to_end_and_eval_json(tmp_path, suite, capsys):
    root, ann = suite
    assert main(["gen-labels", str(ann), str(tmp_path / "st")]) == EXIT_OK
    assert main(["detect", str(tmp_path / "st"), str(tmp_path / "d.jsonl")]) == EXIT_OK
    capsys.readouterr()
    assert main(["eval", str(tmp_path / "d.jsonl"), str(ann), "--csv", str(tmp_path / "r.csv")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["fscore"] == 1.0
    assert (tmp_path / "r.csv").exists()


def test_detect_worker_independent(tmp_path, suite):
    _, ann = suite
    main(["gen-labels", str(ann), str(tmp_path / "st")])
    for w in ("1", "2"):
        assert main(["detect", str(tmp_path / "st"), str(tmp_path / f"d{w}.jsonl"), "--worker-count", w,
                     "--noise-sigma", "0.05", "--seed", "3"]) == EXIT_OK
    assert (tmp_path / "d1.jsonl").read_bytes() == (tmp_path / "d2.jsonl").read_bytes()


def test_empty_stack_gives_zero_detections(tmp_path):
    write_stack(HeatmapStack.empty(50, 40, 1), tmp_path / "blank.kptl")
    assert main(["detect", str(tmp_path), str(tmp_path / "d.jsonl")]) == EXIT_OK
    line = json.loads((tmp_path / "d.jsonl").read_text())
    assert line == {"image": "blank.png", "detections": []}


def test_corrupt_stack_skipped(tmp_path, caplog):
    write_stack(HeatmapStack.empty(50, 40, 1), tmp_path / "good.kptl")
    (tmp_path / "bad.kptl").write_bytes(b"garbage")
    with caplog.at_level(logging.WARNING, logger="textkp"):
        assert main(["detect", str(tmp_path), str(tmp_path / "d.jsonl")]) == EXIT_OK
    assert "bad.kptl" in caplog.text
    assert [json.loads(l)["image"] for l in (tmp_path / "d.jsonl").read_text().splitlines()] == ["good.png"]


def test_all_stacks_corrupt_is_failure(tmp_path):
    (tmp_path / "bad.kptl").write_bytes(b"garbage")
    assert main(["detect", str(tmp_path), str(tmp_path / "d.jsonl")]) == EXIT_FAIL


def test_rectify_rectangle_patch_equals_crop(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, (80, 160, 3), dtype=np.uint8)
    (tmp_path / "img").mkdir()
    Image.fromarray(pixels).save(tmp_path / "img" / "a.png")
    poly = [(30, 20), (130, 20), (130, 40), (30, 40)]
    det = {"image": "a.png", "detections": [{"polygon": [list(v) for v in poly], "score": 1.0}]}
    (tmp_path / "d.jsonl").write_text(json.dumps(det) + "\n")
    assert main(["rectify", str(tmp_path / "img"), str(tmp_path / "d.jsonl"), str(tmp_path / "out"),
                 "--extension-factor", "0"]) == EXIT_OK
    patch = np.asarray(Image.open(tmp_path / "out" / "a_inst0.png"))
    assert patch.shape == (20, 100, 3)
    assert np.abs(patch.astype(int) - pixels[20:40, 30:130].astype(int)).max() <= 1


def test_rectify_missing_image_names_path(tmp_path, caplog):
    det = {"image": "nowhere.png", "detections": [{"polygon": [[0, 0], [9, 0], [9, 9], [0, 9]]}]}
    (tmp_path / "d.jsonl").write_text(json.dumps(det) + "\n")
    with caplog.at_level(logging.ERROR, logger="textkp"):
        code = main(["rectify", str(tmp_path), str(tmp_path / "d.jsonl"), str(tmp_path / "out")])
    assert code == EXIT_FAIL
    assert str(tmp_path / "nowhere.png") in caplog.text


def test_eval_unknown_image_is_usage_error(tmp_path, suite, capsys):
    _, ann = suite
    (tmp_path / "d.jsonl").write_text(json.dumps({"image": "zzz.png", "detections": []}) + "\n")
    assert main(["eval", str(tmp_path / "d.jsonl"), str(ann)]) == EXIT_USAGE
    assert "zzz.png" in capsys.readouterr().err


def test_config_precedence(tmp_path, monkeypatch):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\npeak-threshold = 0.4\nworker_count = 5\nmutual = true\n")
    parser = build_parser()
    monkeypatch.delenv("TEXTKP_WORKERS", raising=False)
    cfg = resolve_config(parser.parse_args(["detect", "a", "b", "--config", str(cfg_file)]))
    assert (cfg.peak_threshold, cfg.worker_count, cfg.mutual) == (0.4, 5, True)
    monkeypatch.setenv("TEXTKP_WORKERS", "3")
    cfg = resolve_config(parser.parse_args(["detect", "a", "b", "--config", str(cfg_file)]))
    assert cfg.worker_count == 3
    cfg = resolve_config(parser.parse_args(["detect", "a", "b", "--config", str(cfg_file),
                                            "--worker-count", "2", "--peak-threshold", "0.2", "--no-mutual"]))
    assert (cfg.peak_threshold, cfg.worker_count, cfg.mutual) == (0.2, 2, False)


@pytest.mark.parametrize("text", ["bogus_key = 1\n", "peak_threshold\n", "mutual = maybe\n"])
def test_bad_config_file(tmp_path, text, capsys):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text(text)
    assert main(["detect", str(tmp_path), str(tmp_path / "d.jsonl"), "--config", str(cfg_file)]) == EXIT_USAGE
    assert "configuration error" in capsys.readouterr().err


def test_out_of_range_flag(tmp_path):
    assert main(["detect", str(tmp_path), str(tmp_path / "d.jsonl"), "--peak-threshold", "2"]) == EXIT_USAGE


def test_unknown_shape_is_usage_error(tmp_path):
    assert main(["synth", str(tmp_path / "s"), "--images", "1", "--shapes", "hexagon"]) == EXIT_USAGE


def test_detect_one_reports_unreadable(tmp_path):
    from textkp.cli import RunConfig

    dets, err, _ = _detect_one((tmp_path / "missing.kptl", RunConfig(worker_count=1)))
    assert dets is None and err


def _selftest_cfg(*extra):
    return resolve_config(build_parser().parse_args(["selftest", "--worker-count", "1", *extra]))


def test_selftest_misconfigured_ratio_fails(capsys):
    code = main(["selftest", "--images", "6", "--ratio-threshold", "0.01", "--worker-count", "1"])
    out = capsys.readouterr().out
    assert code == EXIT_FAIL
    assert "[FAIL] association" in out


def test_selftest_report_deterministic():
    cfg = _selftest_cfg()
    a = [(r.name, r.passed, r.detail) for r in run_selftest(cfg, 6)]
    b = [(r.name, r.passed, r.detail) for r in run_selftest(cfg, 6)]
    assert a == b
