import csv
import filecmp
import math
import os
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

CLI = os.environ.get("RTSMONO_CLI") or shutil.which("rtsmono")

pytestmark = pytest.mark.skipif(CLI is None, reason="set RTSMONO_CLI to the rtsmono executable")

SMALL = ["--set", "variant=test", "--set", "width=128", "--set", "height=64", "--set", "batch_size=1"]


def run(*args, check=True):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"{args[0]} failed ({proc.returncode}): {proc.stderr}")
    return proc


def read_pfm(path):
    with open(path, "rb") as f:
        assert f.readline().strip() == b"Pf"
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(), dtype="<f4" if scale < 0 else ">f4")
    return data.reshape(h, w)


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(Path(a) / d, Path(b) / d) for d in cmp.common_dirs)


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    run("synth", "--out", root, "--scenes", 1, "--frames", 5, "--seed", 11, "--resolution", "128x64")
    return root


@pytest.fixture(scope="session")
def trained(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("run")
    run("train", "--data", dataset, "--out", out, *SMALL, "--set", "total_steps=10", "--set", "checkpoint_every=5")
    return out


def test_synth_counts_and_determinism(tmp_path):
    for name in ("a", "b"):
        run("synth", "--out", tmp_path / name, "--scenes", 1, "--frames", 3, "--seed", 4, "--resolution", "64x32")
    scene = tmp_path / "a" / "scene_004"
    assert len(list((scene / "frames").glob("*.png"))) == 3
    assert len(list((scene / "gt").glob("*.pfm"))) == 3
    assert (scene / "intrinsics.txt").is_file() and (scene / "poses.txt").is_file()
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_synth_rejects_bad_resolution_before_writing(tmp_path):
    proc = run("synth", "--out", tmp_path / "x", "--resolution", "100x64", check=False)
    assert proc.returncode != 0
    assert len(proc.stderr.strip().splitlines()) == 1
    assert not (tmp_path / "x").exists()


def test_unknown_flag_rejected(tmp_path):
    proc = run("synth", "--out", tmp_path, "--colour", "red", check=False)
    assert proc.returncode != 0 and proc.stderr.strip()


def test_train_log_and_checkpoints(trained):
    assert (trained / "last.bin").is_file() and (trained / "ckpt_000005.bin").is_file()
    with open(trained / "train_log.csv") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0].keys()) == ["step", "lr", "L_p", "L_s", "L_d", "total"]
    assert len(rows) == 10
    for r in rows:
        vals = {k: float(v) for k, v in r.items()}
        assert all(math.isfinite(v) for v in vals.values())
        # default weights: gamma 1, beta 0.001, lambda 1
        expect = vals["L_p"] + 0.001 * vals["L_s"] + vals["L_d"]
        assert abs(vals["total"] - expect) <= 1e-6 * max(1.0, expect)


def test_train_resume_is_bit_exact(tmp_path, dataset, trained):
    out = tmp_path / "resumed"
    run("train", "--data", dataset, "--out", out, *SMALL, "--set", "total_steps=10", "--set", "checkpoint_every=5",
        "--resume", trained / "ckpt_000005.bin")
    full = (trained / "train_log.csv").read_text().splitlines()
    resumed = (out / "train_log.csv").read_text().splitlines()
    assert resumed[-5:] == full[-5:]
    assert (out / "last.bin").read_bytes() == (trained / "last.bin").read_bytes()


def test_infer_shape_bounds_determinism(tmp_path, dataset, trained):
    image = dataset / "scene_011" / "frames" / "000002.png"
    for name in ("p1.pfm", "p2.pfm"):
        run("infer", "--ckpt", trained / "last.bin", "--image", image, "--out", tmp_path / name)
    assert (tmp_path / "p1.pfm").read_bytes() == (tmp_path / "p2.pfm").read_bytes()
    assert (tmp_path / "p1.png").is_file()
    depth = read_pfm(tmp_path / "p1.pfm")
    assert depth.shape == (64, 128)
    assert depth.min() > 0.1 - 1e-6 and depth.max() <= 100.0


def test_eval_mean_matches_reaggregated_csv(tmp_path, dataset, trained):
    proc = run("eval", "--ckpt", trained / "last.bin", "--data", dataset, "--csv", tmp_path / "m.csv")
    printed = proc.stdout.strip().splitlines()[-1].split(",")
    assert printed[0] == "MEAN"
    with open(tmp_path / "m.csv") as f:
        rows = [r for r in csv.reader(f)][1:]
    per_image = [r for r in rows if r[0] != "MEAN"]
    assert len(per_image) == 5
    for col in range(1, 8):
        mean = sum(float(r[col]) for r in per_image) / len(per_image)
        assert f"{mean:.6f}" == printed[col]


def test_eval_empty_mask_reports_skips(tmp_path, dataset, trained):
    proc = run("eval", "--ckpt", trained / "last.bin", "--data", dataset, "--csv", tmp_path / "m.csv",
               "--max-depth", 1, check=False)
    assert proc.returncode != 0
    assert "skipped" in proc.stderr


def bench_value(out, key):
    # lines look like "params full   2811829 (2.812 M)"
    line = next(l for l in out.splitlines() if l.startswith(key))
    return int(line.split()[-3])


def test_bench_budgets_and_flop_scaling():
    out = run("bench", "--variant", "S", "--resolution", "320x96", "--iters", 1, "--warmup", 0).stdout
    assert bench_value(out, "params full") <= 3_500_000
    assert bench_value(out, "params decoder") <= 300_000
    wide = run("bench", "--variant", "S", "--resolution", "640x96", "--iters", 1, "--warmup", 0).stdout
    ratio = bench_value(wide, "flops") / bench_value(out, "flops")
    assert abs(ratio - 2.0) <= 0.02


# Python module checks run when the extension is importable.
try:
    import rtsmono as core
except ImportError:
    core = None


@pytest.mark.skipif(core is None, reason="rtsmono module not on PYTHONPATH")
def test_module_metrics_self_is_perfect():
    _, depth = core.render_random_scene(3, 3, 64, 32, frame=1)
    r = core.compute_metrics(depth, depth, 80.0, False)
    assert r["abs_rel"] == 0.0 and r["a1"] == 1.0


@pytest.mark.skipif(core is None, reason="rtsmono module not on PYTHONPATH")
def test_module_model_predicts_input_resolution(dataset, trained):
    model = core.DepthModel(str(trained / "last.bin"))
    image = core.read_png(str(dataset / "scene_011" / "frames" / "000001.png"))
    depth = model.predict(image)
    assert depth.shape == image.shape[1:]
    assert model.step == 10
    assert abs(core.disp_to_depth(0.0) - 100.0) < 1e-9
    counts = core.parameter_counts("S")
    assert counts["full"] == counts["encoder"] + counts["decoder"]
