import subprocess
import sys

import numpy as np
import pytest

from auxrecon.backbone import ReconModel
from auxrecon.cli import main
from auxrecon.config import RunConfig

CONFIG = """\
# tiny run
dim = 16
layers = 1
heads = 2
patch = 4
registers = 1
image_height = 16
image_width = 16
camera_head_layers = 1
train_scenes = 2
scene_frames = 4
frames = 3
top_n = 3
steps = 3
eval_scenes = 2
eval_frames = 3
eval_schedule = 0:0, 100:100
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "run.cfg").write_text(CONFIG)
    assert main(["train", "--config", str(d / "run.cfg"), "--out", str(d / "m.ckpt")]) == 0
    return d


def test_train_writes_checkpoint_and_logs(workdir):
    assert (workdir / "m.ckpt").stat().st_size > 0
    lines = (workdir / "m.losses.csv").read_text().splitlines()
    assert lines[0] == "step,camera,depth,pmap,total" and len(lines) == 4
    assert (workdir / "m.losses.assignments.csv").exists()


def test_train_twice_gives_identical_files(workdir, tmp_path):
    assert main(["train", "--config", str(workdir / "run.cfg"), "--out", str(tmp_path / "m.ckpt")]) == 0
    assert (tmp_path / "m.ckpt").read_bytes() == (workdir / "m.ckpt").read_bytes()
    assert (tmp_path / "m.losses.csv").read_text() == (workdir / "m.losses.csv").read_text()


def test_eval_writes_reports(workdir, capsys):
    out = workdir / "eval"
    assert main(["eval", "--ckpt", str(workdir / "m.ckpt"), "--config", str(workdir / "run.cfg"),
                 "--out-dir", str(out)]) == 0
    assert (out / "sweep.csv").exists()
    assert (out / "metrics_cam000_dep000.json").exists() and (out / "metrics_cam100_dep100.json").exists()
    assert "abs_rel" in capsys.readouterr().out


def test_inspect_reports_parameters(workdir, capsys):
    assert main(["inspect", "--ckpt", str(workdir / "m.ckpt")]) == 0
    text = capsys.readouterr().out
    model = ReconModel(
        RunConfig(dim=16, layers=1, heads=2, patch=4, registers=1, image_height=16, image_width=16,
                  camera_head_layers=1).backbone_config())
    assert f"total parameters: {model.num_parameters()}" in text
    assert "adapter.camera.zero_injections.0.weight" in text


def test_inspect_fresh_model_gates_zero(tmp_path, capsys):
    from auxrecon.checkpoint import save_checkpoint

    save_checkpoint(ReconModel(RunConfig().backbone_config()), tmp_path / "fresh.ckpt")
    assert main(["inspect", "--ckpt", str(tmp_path / "fresh.ckpt")]) == 0
    assert "max deviation: 0\n" in capsys.readouterr().out


def test_corrupt_checkpoint_reports_crc(workdir, tmp_path, capsys):
    blob = bytearray((workdir / "m.ckpt").read_bytes())
    blob[100] ^= 0xFF
    (tmp_path / "bad.ckpt").write_bytes(bytes(blob))
    assert main(["inspect", "--ckpt", str(tmp_path / "bad.ckpt")]) == 2
    assert "CRC" in capsys.readouterr().err


def test_config_errors_name_the_line(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("steps = 2\nsteps = 3\n")
    assert main(["train", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path / "x.ckpt")]) == 2
    assert "bad.cfg:2" in capsys.readouterr().err


def test_mismatched_checkpoint(workdir, tmp_path, capsys):
    (tmp_path / "big.cfg").write_text("dim = 32\n")
    code = main(["eval", "--ckpt", str(workdir / "m.ckpt"), "--config", str(tmp_path / "big.cfg"),
                 "--out-dir", str(tmp_path / "e")])
    assert code == 2


def test_ablate_command(workdir, tmp_path):
    cfg = workdir / "ab.cfg"
    cfg.write_text(CONFIG.replace("steps = 3", "steps = 1"))
    assert main(["ablate", "--config", str(cfg), "--out", str(tmp_path / "ab.csv")]) == 0
    lines = (tmp_path / "ab.csv").read_text().splitlines()
    assert lines[0] == "variant,aux,abs_rel,delta_125,rra5,rta5,auc30" and len(lines) == 9


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "auxrecon", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "eval", "ablate", "inspect"):
        assert cmd in proc.stdout
