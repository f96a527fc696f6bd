import json
import subprocess
import sys

import pytest

from objdepth.cli import main
from objdepth.config import save_config
from objdepth.pfm import read_pfm

from conftest import tiny_config


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    save_config(tiny_config(), root / "tiny.yaml")
    assert main(["synth", "--n", "4", "--seed", "2", "--out-dir", str(root / "data")]) == 0
    assert main(["train", "--config", str(root / "tiny.yaml"), "--max-steps", "2",
                 "--data-dir", str(root / "data"), "--out-dir", str(root / "run")]) == 0
    return root


def test_synth_outputs(workspace):
    manifest = json.loads((workspace / "data" / "manifest.json").read_text())
    assert manifest["count"] == 4 and manifest["spec"]["seed"] == 2


def test_train_outputs(workspace):
    run = workspace / "run"
    assert (run / "checkpoint.ckpt").exists() and (run / "config.yaml").exists()
    assert len((run / "train_log.csv").read_text().splitlines()) == 3


def test_eval_prints_report(workspace, capsys):
    code = main(["eval", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
                 "--data-dir", str(workspace / "data"), "--out-dir", str(workspace / "ev"), "--tta-mirror"])
    out = capsys.readouterr().out
    assert code == 0
    assert "abs_rel=" in out and "tta_mirror=True" in out
    assert (workspace / "ev" / "metrics.json").exists()


def test_infer(workspace, capsys):
    code = main(["infer", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
                 "--image", str(workspace / "data" / "images" / "scene_00001.pfm"),
                 "--detections", str(workspace / "data" / "detections.jsonl"),
                 "--out", str(workspace / "pred.pfm"), "--vis", str(workspace / "pred.png")])
    assert code == 0
    assert read_pfm(workspace / "pred.pfm").shape == (64, 80)
    assert (workspace / "pred.png").exists()


def test_infer_unknown_image(workspace, capsys):
    code = main(["infer", "--checkpoint", str(workspace / "run" / "checkpoint.ckpt"),
                 "--image", str(workspace / "data" / "images" / "scene_00001.pfm"), "--image-id", "nope",
                 "--detections", str(workspace / "data" / "detections.jsonl"), "--out", str(workspace / "x.pfm")])
    err = capsys.readouterr().err
    assert code == 1 and err.startswith("error kind=evaluation message=")
    assert "nope" in json.loads(err.split("message=", 1)[1])


def test_missing_file_is_io_error(tmp_path, capsys):
    code = main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt"), "--data-dir", str(tmp_path)])
    assert code == 3 and "error kind=io" in capsys.readouterr().err


def test_bad_config_is_configuration_error(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("patch_size: 7\n")
    code = main(["train", "--config", str(tmp_path / "c.yaml"), "--data-dir", str(tmp_path), "--out-dir", str(tmp_path)])
    assert code == 1 and "error kind=configuration" in capsys.readouterr().err


def test_corrupt_checkpoint_is_parse_error(tmp_path, capsys):
    (tmp_path / "bad.ckpt").write_bytes(b"garbage")
    code = main(["eval", "--checkpoint", str(tmp_path / "bad.ckpt"), "--data-dir", str(tmp_path)])
    assert code == 1 and "error kind=parse" in capsys.readouterr().err


def test_ablate_small(workspace, capsys):
    code = main(["ablate", "--config", str(workspace / "tiny.yaml"), "--max-steps", "1",
                 "--data-dir", str(workspace / "data"), "--out-dir", str(workspace / "abl")])
    out = capsys.readouterr().out
    assert code == 0 and out.startswith("| Pos. emb. |") and len(out.splitlines()) == 14


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "objdepth.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("synth", "train", "eval", "infer", "ablate"):
        assert cmd in proc.stdout
