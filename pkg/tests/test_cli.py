import csv

import numpy as np
import pytest

from dynct import io
from dynct.cli import main

SMALL_SIM = ["--grid-n", "16", "--n-frames", "6", "--n-sensors", "12", "--hi-res", "64"]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--seed", "3", "--out", str(out)] + SMALL_SIM) == 0
    return out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_outputs_and_manifest(sim_dir):
    sino = io.read_sinogram(sim_dir / "sinogram.bin")
    gt = io.read_volume(sim_dir / "ground_truth.vol")
    assert sino.data.shape == (12, 6)
    assert gt.values.shape == (6, 256)
    command, config, outputs = io.read_manifest(sim_dir / "manifest.ini")
    assert command == "simulate" and config["seed"] == "3"
    assert outputs["sinogram.bin"] == io.file_digest(sim_dir / "sinogram.bin")


def test_paper_preset_ground_truth_against_itself_is_infinite(tmp_path, capsys):
    assert main(["simulate", "--phantom", "two-square", "--preset", "paper", "--seed", "7",
                 "--out", str(tmp_path / "sim")]) == 0
    assert (tmp_path / "sim" / "sinogram.bin").stat().st_size == 52_840
    gt = str(tmp_path / "sim" / "ground_truth.vol")
    assert main(["eval", "--recon", gt, "--reference", gt, "--out", str(tmp_path / "ev")]) == 0
    assert "PSNR inf dB" in capsys.readouterr().out
    rows = _rows(tmp_path / "ev" / "metrics.csv")
    assert rows[0]["name"] == "psnr" and float(rows[0]["value"]) == float("inf")
    assert len(rows) == 2 + 100


def test_replay_is_bit_identical(sim_dir, tmp_path, capsys):
    assert main(["replay", str(sim_dir / "manifest.ini"), "--out", str(tmp_path / "again"), "--check"]) == 0
    assert "replay bit-identical" in capsys.readouterr().out
    assert (tmp_path / "again" / "sinogram.bin").read_bytes() == (sim_dir / "sinogram.bin").read_bytes()


def test_replay_detects_changed_outputs(sim_dir, tmp_path):
    text = (sim_dir / "manifest.ini").read_text()
    forged = tmp_path / "forged.ini"
    digest = io.file_digest(sim_dir / "sinogram.bin")
    forged.write_text(text.replace(digest, "0" * 64))
    assert main(["replay", str(forged), "--out", str(tmp_path / "again"), "--check"]) == 3


def test_recon_grid_and_replay(sim_dir, tmp_path):
    out = tmp_path / "grid"
    argv = ["recon-grid", "--sinogram", str(sim_dir / "sinogram.bin"),
            "--ground-truth", str(sim_dir / "ground_truth.vol"), "--rounds", "2", "--inner-iters", "20",
            "--out", str(out)]
    assert main(argv) == 0
    rows = _rows(out / "objective.csv")
    assert [r["round"] for r in rows] == ["1", "2"]
    assert all(np.isfinite(float(r["psnr"])) for r in rows)
    assert io.read_volume(out / "velocity_x.vol").values.shape == (6, 256)
    assert main(["replay", str(out / "manifest.ini"), "--out", str(tmp_path / "again"), "--check"]) == 0


def test_recon_nf_and_replay(sim_dir, tmp_path):
    out = tmp_path / "nf"
    argv = ["recon-nf", "--sinogram", str(sim_dir / "sinogram.bin"),
            "--ground-truth", str(sim_dir / "ground_truth.vol"), "--epochs", "3", "--batch-size", "3",
            "--width", "8", "--out", str(out)]
    assert main(argv) == 0
    hist = _rows(out / "history.csv")
    assert len(hist) == 3 and "seconds" not in hist[0]
    assert "seconds" in _rows(out / "timing.csv")[0]
    assert (out / "u.ckpt").read_bytes()[:7] == b"NFCKPT1"
    assert main(["replay", str(out / "manifest.ini"), "--out", str(tmp_path / "again"), "--check"]) == 0


def test_sweep_gamma_layout(sim_dir, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep-gamma", "--sinogram", str(sim_dir / "sinogram.bin"),
                 "--ground-truth", str(sim_dir / "ground_truth.vol"), "--gammas", "0,1e-2",
                 "--epochs", "2", "--batch-size", "3", "--width", "8", "--out", str(out)]) == 0
    rows = _rows(out / "psnr_vs_step.csv")
    assert list(rows[0]) == ["step", "gamma=0", "gamma=0.01"]
    assert len(rows) == 2


def test_render(sim_dir, tmp_path):
    out = tmp_path / "frames"
    assert main(["render", "--volume", str(sim_dir / "ground_truth.vol"), "--window", "0,1",
                 "--out", str(out)]) == 0
    assert len(list(out.glob("frame_*.pgm"))) == 6
    assert len(_rows(out / "frames.csv")) == 6


def test_config_file_supplies_defaults(tmp_path):
    cfg = tmp_path / "sim.ini"
    cfg.write_text("[simulate]\nseed = 5\ngrid-n = 16\nn-frames = 2\nn-sensors = 8\nhi-res = 32\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    _, config, _ = io.read_manifest(tmp_path / "a" / "manifest.ini")
    assert config["seed"] == "5" and config["n_frames"] == "2"
    # explicit flags override the file
    assert main(["simulate", "--config", str(cfg), "--seed", "6", "--out", str(tmp_path / "b")]) == 0
    assert io.read_manifest(tmp_path / "b" / "manifest.ini")[1]["seed"] == "6"


def test_unknown_flag_is_a_usage_error(capsys):
    assert main(["simulate", "--no-such-flag"]) != 0
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand():
    assert main(["frobnicate"]) != 0


def test_unknown_config_key(tmp_path):
    (tmp_path / "bad.ini").write_text("[x]\nbogus = 1\n")
    assert main(["simulate", "--config", str(tmp_path / "bad.ini"), "--out", str(tmp_path)]) != 0


def test_inconsistent_inputs_report_diagnostic(sim_dir, tmp_path, capsys):
    other = tmp_path / "other"
    assert main(["simulate", "--out", str(other), "--grid-n", "16", "--n-frames", "4", "--n-sensors", "12",
                 "--hi-res", "64"]) == 0
    code = main(["recon-grid", "--sinogram", str(sim_dir / "sinogram.bin"),
                 "--ground-truth", str(other / "ground_truth.vol"), "--out", str(tmp_path / "r")])
    assert code == 2
    assert "frames" in capsys.readouterr().err


def test_missing_grid_is_reported(sim_dir, tmp_path, capsys):
    assert main(["recon-grid", "--sinogram", str(sim_dir / "sinogram.bin"), "--out", str(tmp_path)]) == 2
    assert "--grid-n" in capsys.readouterr().err


def test_corrupt_input_is_reported(tmp_path, capsys):
    (tmp_path / "bad.bin").write_bytes(b"garbage")
    assert main(["recon-grid", "--sinogram", str(tmp_path / "bad.bin"), "--grid-n", "8",
                 "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
