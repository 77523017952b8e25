import os
import re
import subprocess
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

CLI = os.environ.get("DBPN_CLI", "dbpn")
CHECKSUMS = Path(__file__).resolve().parents[1] / "unit" / "synth_checksums.inc"


def run(*args, check=None):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if check is not None:
        assert proc.returncode == check, proc.stdout + proc.stderr
    return proc


def fnv1a(img):
    h = 1469598103934665603
    data = bytearray()
    for v in (img.shape[1], img.shape[0], img.shape[2] if img.ndim == 3 else 1):
        data += int(v).to_bytes(8, "little")
    data += img.tobytes()
    for b in data:
        h ^= b
        h = (h * 1099511628211) & 0xFFFFFFFFFFFFFFFF
    return h


def plain_ledger(c, n0, nr, stages, k, recon):
    extract = c * n0 * 9 + 2 * n0
    reduce = n0 * nr + 2 * nr
    unit_layers = 3 * (2 * stages - 1)
    return extract + reduce + unit_layers * (nr * nr * k * k + 2 * nr) + stages * nr * c * recon * recon + c


def params_total(out):
    return int(re.search(r"^total (\d+)$", out, re.M).group(1))


def test_params_match_hand_counts():
    out = run("params", "--preset", "S", "--scale", "4", check=0).stdout
    assert params_total(out) == 596033 == plain_ledger(1, 128, 32, 2, 8, 1)
    assert re.search(r"^layers 12$", out, re.M)
    out = run("params", "--preset", "DDBPN", "--scale", "8", check=0).stdout
    assert params_total(out) == 23209283
    assert re.search(r"^units 13$", out, re.M) and re.search(r"^merges 10$", out, re.M)


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# params settings\npreset = L\nscale = 4   # overridden below\n\n")
    out = run("params", "--config", cfg, "--scale", "2", check=0).stdout
    assert params_total(out) == plain_ledger(1, 128, 32, 6, 6, 1)
    out = run("params", "--config", cfg, check=0).stdout
    assert params_total(out) == 2170561


def test_unknown_config_key_is_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("preset = S\nscale = 4\nlearning_rate = 1\n")
    proc = run("params", "--config", cfg, check=2)
    assert "unknown key 'learning_rate'" in proc.stderr


def test_missing_scale_prints_usage():
    proc = run("train", "--preset", "S", "--data", "synth", "--iters", "1", check=2)
    assert "Usage" in proc.stderr


def test_unknown_flag_and_bad_preset():
    run("params", "--preset", "S", "--scale", "4", "--bogus", "1", check=2)
    run("params", "--preset", "XL", "--scale", "4", check=2)
    run("params", "--preset", "S", "--scale", "3", check=2)


def test_synth_writes_frozen_images(tmp_path):
    expected = [int(m, 16) for m in re.findall(r"0x([0-9a-f]{16})ULL", CHECKSUMS.read_text())]
    out = run("synth", "--seed", 1, "--count", 8, "--size", 64, "--out", tmp_path, check=0).stdout
    lines = out.strip().splitlines()
    assert len(lines) == 8
    for line, want in zip(lines, expected):
        path, printed = line.split()
        assert int(printed, 16) == want
        pixels = np.asarray(Image.open(path).convert("RGB"))
        assert pixels.shape == (64, 64, 3)
        assert fnv1a(pixels) == want


def train_small(out, *extra):
    return run("train", "--preset", "SS", "--scale", 2, "--data", "synth", "--synth-count", 4,
               "--iters", 12, "--batch", 2, "--patch", 8, "--lr", "1e-3", "--log-every", 4,
               "--out", out, *extra, check=0)


def test_train_is_deterministic(tmp_path):
    train_small(tmp_path / "a.ckpt")
    train_small(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    log = (tmp_path / "a.csv").read_text().splitlines()
    assert log[0] == "iter,lr,loss"
    assert [row.split(",")[0] for row in log[1:]] == ["4", "8", "12"]


def test_train_resume_matches(tmp_path):
    train_small(tmp_path / "full.ckpt")
    run("train", "--preset", "SS", "--scale", 2, "--data", "synth", "--synth-count", 4, "--iters", 5,
        "--batch", 2, "--patch", 8, "--lr", "1e-3", "--out", tmp_path / "half.ckpt", check=0)
    train_small(tmp_path / "resumed.ckpt", "--resume", tmp_path / "half.ckpt")
    assert (tmp_path / "full.ckpt").read_bytes() == (tmp_path / "resumed.ckpt").read_bytes()


def test_train_errors(tmp_path):
    run("train", "--preset", "SS", "--scale", 2, "--data", tmp_path / "missing", "--iters", 1,
        "--out", tmp_path / "x.ckpt", check=3)
    proc = run("train", "--preset", "SS", "--scale", 2, "--data", "synth", "--iters", 50, "--lr", "1e30",
               "--checkpoint-every", 1, "--batch", 2, "--patch", 8, "--out", tmp_path / "nan.ckpt", check=4)
    assert "non-finite" in proc.stderr or "NaN" in proc.stderr or "nan" in proc.stderr
    assert (tmp_path / "nan.ckpt").exists()


def test_sr_scale_law_and_errors(tmp_path):
    run("train", "--preset", "SS", "--scale", 8, "--data", "synth", "--synth-count", 1, "--iters", 1,
        "--batch", 1, "--patch", 4, "--out", tmp_path / "x8.ckpt", check=0)
    lr = (np.arange(32 * 32 * 3) % 251).astype(np.uint8).reshape(32, 32, 3)
    Image.fromarray(lr).save(tmp_path / "in.png")
    run("sr", "--model", tmp_path / "x8.ckpt", "--input", tmp_path / "in.png", "--output", tmp_path / "out.png",
        check=0)
    assert Image.open(tmp_path / "out.png").size == (256, 256)
    run("sr", "--model", tmp_path / "x8.ckpt", "--input", tmp_path / "nope.png", "--output", tmp_path / "o.png",
        check=3)
    run("sr", "--model", tmp_path / "x8.ckpt", "--input", tmp_path / "in.png", "--output", tmp_path / "o.png",
        "--scale", 4, check=2)
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    run("sr", "--model", tmp_path / "junk.ckpt", "--input", tmp_path / "in.png", "--output", tmp_path / "o.png",
        check=3)


def test_sr_dumps_seven_feature_grids_for_ddbpn(tmp_path):
    ckpt = tmp_path / "dd.ckpt"
    try:
        run("train", "--preset", "DDBPN", "--scale", 8, "--data", "synth", "--synth-count", 1, "--iters", 1,
            "--batch", 1, "--patch", 4, "--out", ckpt, check=0)
        Image.fromarray(np.full((6, 5, 3), 90, np.uint8)).save(tmp_path / "in.png")
        out = run("sr", "--model", ckpt, "--input", tmp_path / "in.png", "--output", tmp_path / "out.png",
                  "--dump-features", tmp_path / "feat", check=0).stdout
        assert Image.open(tmp_path / "out.png").size == (40, 48)
        grids = sorted((tmp_path / "feat").glob("*.png"))
        assert len(grids) == 7
        assert all(str(g) in out for g in grids)
    finally:
        ckpt.unlink(missing_ok=True)


def test_eval_reports(tmp_path):
    train_small(tmp_path / "m.ckpt")
    csv = run("eval", "--model", tmp_path / "m.ckpt", "--data", "synth", "--synth-count", 3, check=0).stdout
    rows = [l for l in csv.splitlines() if l and not l.startswith("#")]
    assert rows[0] == "image,psnr_db,ssim"
    assert [r.split(",")[0] for r in rows[1:]] == ["synth_000", "synth_001", "synth_002", "MEAN"]
    assert "# crop=2" in csv
    run("eval", "--data", "synth", check=2)
    run("eval", "--model", tmp_path / "m.ckpt", "--data", "synth", "--scale", 4, check=2)
    base = run("eval", "--baseline", "--data", "synth", "--scale", 2, "--out", tmp_path / "b.csv", check=0)
    assert base.stdout == ""
    assert "# method=bicubic" in (tmp_path / "b.csv").read_text()


def test_eval_directory_dataset(tmp_path):
    run("synth", "--seed", 4, "--count", 2, "--size", 48, "--out", tmp_path / "HR", check=0)
    csv = run("eval", "--baseline", "--data", tmp_path, "--scale", 4, check=0).stdout
    assert "synth_000," in csv and "synth_001," in csv
    assert (tmp_path / "LR_x4" / "synth_000.png").exists()


def test_gradcheck_passes():
    out = run("gradcheck", "--seed", 3, check=0).stdout
    worst = float(re.search(r"^max_rel_error (\S+)", out, re.M).group(1))
    assert worst < 1e-4


def test_commands_are_deterministic(tmp_path):
    a = run("eval", "--baseline", "--data", "synth", "--scale", 2, check=0).stdout
    b = run("eval", "--baseline", "--data", "synth", "--scale", 2, check=0).stdout
    assert a == b


@pytest.mark.parametrize("cmd", ["train", "sr", "eval", "gradcheck", "params", "synth"])
def test_help(cmd):
    assert "Usage" in run(cmd, "--help", check=0).stdout
