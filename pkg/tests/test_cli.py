import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from polysnake import cli, training
from polysnake.annotations import load_annotations

from conftest import tiny_config


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def digest(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert cli.main(["gen-data", "--out", str(data), "--size", "64", "--kinds", "ellipse,star",
                     "--split", "train=0..6", "--split", "val=6..9"]) == 0
    cfg = tiny_config(kinds=("ellipse", "star"), num_classes=2, steps=2, stage2_steps=1,
                      checkpoint_every=0)
    cfg.save(root / "tiny.json")
    assert cli.main(["train", "--data", str(data), "--out", str(root / "s1"),
                     "--config", str(root / "tiny.json")]) == 0
    assert cli.main(["train", "--data", str(data), "--stage", "2", "--out", str(root / "s2"),
                     "--init", str(root / "s1" / "stage1.ckpt")]) == 0
    return root


def test_gen_data_count(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-data", "--out", tmp_path, "--seeds", "0..20",
                       "--kinds", "ellipse,star,blob", "--size", "64")
    assert code == 0
    summary = json.loads(out)
    assert summary["samples"] == 20 and summary["splits"] == {"all": 20}
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["samples"]) == 20 and manifest["kinds"] == ["ellipse", "star", "blob"]


def test_gen_data_rerun_is_byte_identical(tmp_path, capsys):
    args = ["--seeds", "5..11", "--size", "64"]
    run(capsys, "gen-data", "--out", tmp_path / "a", *args)
    run(capsys, "gen-data", "--out", tmp_path / "b", *args)
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_overlapping_splits_rejected(tmp_path, capsys):
    code, _, err = run(capsys, "gen-data", "--out", tmp_path, "--split", "train=0..10",
                       "--split", "val=5..15")
    assert code == 1
    msg = json.loads(err.strip().splitlines()[-1])
    assert msg["error"] == "ValueError" and "overlap" in msg["message"]


def test_stage2_without_init_rejected(workspace, capsys):
    code, _, err = run(capsys, "train", "--data", workspace / "data", "--stage", "2",
                       "--out", workspace / "bad")
    assert code == 1 and "stage-1 checkpoint" in json.loads(err)["message"]


def test_stage2_rejects_stage2_init(workspace, capsys):
    code, _, err = run(capsys, "train", "--data", workspace / "data", "--stage", "2",
                       "--out", workspace / "bad", "--init", workspace / "s2" / "stage2.ckpt")
    assert code == 1 and "expected stage 1" in json.loads(err)["message"]


def test_train_writes_run_artifacts(workspace):
    run_json = json.loads((workspace / "s1" / "run.json").read_text())
    assert run_json["overrides"]["n_vertices"] == 16
    assert (workspace / "s1" / "metrics_stage1.jsonl").stat().st_size > 0
    p1, _, _ = training.load_checkpoint(workspace / "s1" / "stage1.ckpt")
    p2, meta, _ = training.load_checkpoint(workspace / "s2" / "stage2.ckpt")
    for k in p1.tensors:
        if not k.startswith("mcr."):
            assert np.array_equal(p1[k].value, p2[k].value), k
    assert meta["stage"] == 2


def test_infer_blank_image_has_no_detections(workspace, tmp_path, capsys):
    Image.fromarray(np.zeros((64, 64, 3), np.uint8)).save(tmp_path / "blank.png")
    code, out, _ = run(capsys, "infer", "--checkpoint", workspace / "s2" / "stage2.ckpt",
                       "--image", tmp_path / "blank.png", "--out", tmp_path / "o")
    assert code == 0 and json.loads(out)["detections"] == 0
    assert (tmp_path / "o" / "overlay.png").exists()


def test_infer_trace_counts(workspace, tmp_path, capsys):
    img = workspace / "data" / "images"
    first = sorted(img.iterdir())[0]
    code, _, _ = run(capsys, "infer", "--checkpoint", workspace / "s2" / "stage2.ckpt", "--image", first,
                     "--out", tmp_path, "--trace", "--set", "peak_threshold=0.0", "--set", "top_k=3")
    assert code == 0
    dets = load_annotations(tmp_path / "detections.jsonl")
    assert len(dets) == 3 and all(d.polygon.shape == (16, 2) for d in dets)
    rows = [json.loads(l) for l in open(tmp_path / "trace.jsonl")]
    for i in range(3):
        labels = [r["iteration"] for r in rows if r["instance"] == i]
        assert labels == ["C0", "C1", "C2", "C3", "CM"]            # K + 2 with K = 3
        assert all(len(r["polygon"]) == 32 for r in rows)
    with Image.open(tmp_path / "overlay.png") as im:
        assert im.format == "PNG" and im.size == (256, 256)


def test_infer_rejects_bad_images(workspace, tmp_path, capsys):
    (tmp_path / "junk.png").write_bytes(b"not an image")
    code, _, err = run(capsys, "infer", "--checkpoint", workspace / "s1" / "stage1.ckpt",
                       "--image", tmp_path / "junk.png", "--out", tmp_path)
    assert code == 1 and "decode" in json.loads(err)["message"]
    Image.fromarray(np.zeros((60, 64, 3), np.uint8)).save(tmp_path / "odd.png")
    code, _, err = run(capsys, "infer", "--checkpoint", workspace / "s1" / "stage1.ckpt",
                       "--image", tmp_path / "odd.png", "--out", tmp_path)
    assert code == 1 and "divisible by 8" in json.loads(err)["message"]


def test_eval_ground_truth_as_predictions(workspace, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--data", workspace / "data", "--split", "val",
                       "--predictions", workspace / "data" / "annotations.jsonl", "--out", tmp_path)
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["ap_vol"] == 100
    assert "AP_vol       100.00" in out


def test_eval_per_iteration_rows(workspace, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--checkpoint", workspace / "s2" / "stage2.ckpt",
                       "--data", workspace / "data", "--per-iteration", "--out", tmp_path,
                       "--set", "peak_threshold=0.0")
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert len(rep["per_iteration"]["mean_iou"]) == 3 + 2
    aps = [rep["ap"][k] for k in sorted(rep["ap"])]
    assert len(aps) == 9 and rep["ap_vol"] == pytest.approx(np.mean(aps))
    assert (tmp_path / "per_iteration.svg").exists()


def test_eval_empty_split_rejected(workspace, capsys):
    code, _, err = run(capsys, "eval", "--checkpoint", workspace / "s1" / "stage1.ckpt",
                       "--data", workspace / "data", "--split", "test")
    assert code == 1 and json.loads(err)["error"]


def test_console_script_errors_are_one_json_line(tmp_path):
    r = subprocess.run([sys.executable, "-m", "polysnake.cli", "infer", "--checkpoint",
                        str(tmp_path / "missing.ckpt"), "--image", "x.png", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 1
    lines = r.stderr.strip().splitlines()
    assert len(lines) == 1 and set(json.loads(lines[0])) == {"error", "message"}


def test_help_lists_verbs():
    r = subprocess.run([sys.executable, "-m", "polysnake.cli", "--help"], capture_output=True, text=True)
    for verb in ("gen-data", "train", "infer", "eval"):
        assert verb in r.stdout
