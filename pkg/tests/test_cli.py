import json
import subprocess
import sys

import numpy as np
import pytest

from semidepth import dataio
from semidepth.cli import main
from semidepth.core import DepthMap, ImageBuffer, Rigid3


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_convert_scalars(capsys):
    assert run(capsys, "convert", "--range", "0.1,100", "--scale", 64, "--depth", 30)[:2] == (0, "0.212545879\n")
    assert run(capsys, "convert", "--range", "0.1,100", "--scale", 1, "--x", 0)[:2] == (0, "100.0\n")
    code, _, err = run(capsys, "convert", "--x", 1.5)
    assert code != 0 and "disparity out of [0,1]" in err
    code, _, err = run(capsys, "convert", "--scale", 1, "--depth", 1000)
    assert code != 0 and "depth out of" in err


def test_convert_maps(tmp_path, capsys):
    d = DepthMap(np.array([[10.0, 20.0], [30.0, 40.0]]))
    dataio.write_depth_png16(tmp_path / "d.png", d)
    assert run(capsys, "convert", "--depth-map", tmp_path / "d.png", "--out", tmp_path / "x.png")[0] == 0
    assert run(capsys, "convert", "--x-map", tmp_path / "x.png", "--out", tmp_path / "d2.png")[0] == 0
    back = dataio.read_depth_png16(tmp_path / "d2.png")
    assert np.allclose(back.depth, d.depth, rtol=2e-3)


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# experiment\nscale = 64\nrange = 0.1,100\n")
    assert run(capsys, "--config", cfg, "convert", "--depth", 30)[1] == "0.212545879\n"
    assert run(capsys, "--config", cfg, "convert", "--scale", 1, "--depth", 30)[1] == "0.002335669\n"
    cfg.write_text("bogus = 1\n")
    code, _, err = run(capsys, "--config", cfg, "convert", "--depth", 30)
    assert code != 0 and "bogus" in err


@pytest.fixture
def scene_dir(tmp_path, capsys):
    assert run(capsys, "synth", "--out", tmp_path / "scene", "--seed", 3, "--height", 24, "--width", 32)[0] == 0
    return tmp_path / "scene"


def test_synth_is_deterministic(tmp_path, capsys):
    run(capsys, "synth", "--out", tmp_path / "a", "--seed", 5, "--height", 12, "--width", 16)
    run(capsys, "synth", "--out", tmp_path / "b", "--seed", 5, "--height", 12, "--width", 16)
    for name in ("img_k.png", "depth_init.png", "lidar_1.png", "poses.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_warp_identity(scene_dir, tmp_path, capsys):
    dataio.write_pose_file(tmp_path / "id.txt", [Rigid3()])
    K = dataio.read_manifest(scene_dir / "manifest.txt")[0].intrinsics
    code, out, _ = run(capsys, "warp", "--image-k", scene_dir / "img_k.png", "--image-k1", scene_dir / "img_k.png",
                       "--intrinsics", f"{K.fx},{K.fy},{K.cx},{K.cy}", "--pose-file", tmp_path / "id.txt",
                       "--depth", scene_dir / "depth_true.png", "--out", tmp_path / "w.png",
                       "--mask-out", tmp_path / "m.png")
    assert code == 0
    src = dataio.read_image(scene_dir / "img_k.png").data
    warped = dataio.read_image(tmp_path / "w.png").data
    assert np.array_equal(warped[1:-1, 1:-1], src[1:-1, 1:-1])


def test_losses_zero_at_exact_identity(scene_dir, tmp_path, capsys):
    h, w = 24, 32
    dataio.write_pose_file(tmp_path / "id.txt", [Rigid3()])
    dataio.write_depth_png16(tmp_path / "flat.png", DepthMap(np.full((h, w), 12.0)))
    code, out, _ = run(capsys, "losses", "--image-k", scene_dir / "img_k.png", "--image-k1", scene_dir / "img_k.png",
                       "--intrinsics", "30,30,15.5,11.5", "--pose-file", tmp_path / "id.txt",
                       "--dense", tmp_path / "flat.png", "--depth", tmp_path / "flat.png", "--json")
    assert code == 0
    values = json.loads(out)
    assert set(values) == {"l_ir", "l_ds", "l_tm", "l_dd"}
    assert all(abs(v) < 1e-12 for v in values.values())


def test_losses_flags(scene_dir, capsys):
    base = ["losses", "--manifest", scene_dir / "manifest.txt", "--depth", scene_dir / "depth_true.png"]
    code, out, _ = run(capsys, *base, "--loss-terms", "ir", "--alpha", 0)
    assert code == 0 and "l_ds=0.0" in out
    code, _, err = run(capsys, *base, "--loss-terms", "ir,zz")
    assert code != 0


def write_eval_set(root, factor):
    """Two copies of the scene's sparse ground truth with predictions scaled by ``factor``."""
    gt = dataio.read_depth_png16(root / "lidar_0.png")
    (root / "pred").mkdir(exist_ok=True)
    dataio.write_depth_png16(root / "pred" / "img_k.png", DepthMap(gt.depth * factor, gt.valid))
    return root / "pred"


def parse_report(text):
    out = {}
    for line in text.strip().splitlines():
        key, _, value = line.partition("=")
        try:
            out[key] = float(value)
        except ValueError:
            pass
    return out


def test_eval_identity(scene_dir, capsys):
    pred = write_eval_set(scene_dir, 1.0)
    code, out, _ = run(capsys, "eval", scene_dir / "manifest.txt", "--pred-dir", pred)
    rep = parse_report(out)
    assert code == 0 and rep["silog"] == 0.0 and rep["delta1"] == 1.0


def test_eval_median_scaling(scene_dir, tmp_path, capsys):
    pred = write_eval_set(scene_dir, 1.0)
    base = parse_report(run(capsys, "eval", scene_dir / "manifest.txt", "--pred-dir", pred)[1])
    pred = write_eval_set(scene_dir, 2.0)
    code, out, _ = run(capsys, "eval", scene_dir / "manifest.txt", "--pred-dir", pred,
                       "--median-scale", "per-image", "--out", tmp_path / "rep")
    scaled = parse_report(out)
    for k in base:
        assert scaled[k] == pytest.approx(base[k], abs=1e-9)
    assert json.loads((tmp_path / "rep.json").read_text())["image_count"] == 1
    off = parse_report(run(capsys, "eval", scene_dir / "manifest.txt", "--pred-dir", pred, "--median-scale", "off")[1])
    assert off["silog"] == pytest.approx(base["silog"], abs=1e-12)
    assert off["abs_rel"] == 1.0
    glob = parse_report(run(capsys, "eval", scene_dir / "manifest.txt", "--pred-dir", pred, "--median-scale", "global")[1])
    assert glob["abs_rel"] == pytest.approx(0.0, abs=1e-12)


def test_eval_missing_prediction(scene_dir, tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code, _, err = run(capsys, "eval", scene_dir / "manifest.txt", "--pred-dir", tmp_path / "empty")
    assert code != 0 and "img_k.png" in err


def test_scale_stats(scene_dir, capsys):
    # doubling keeps the 16-bit depth encoding exact
    pred = write_eval_set(scene_dir, 2.0)
    code, out, _ = run(capsys, "scale-stats", scene_dir / "manifest.txt", "--pred-dir", pred, "--bins", 4)
    assert code == 0
    assert "mean=0.5" in out and "std=0.0" in out


def test_fuse(scene_dir, tmp_path, capsys):
    K = dataio.read_manifest(scene_dir / "manifest.txt")[0].intrinsics
    frames = [scene_dir / f"lidar_{i}.png" for i in range(3)]
    outs = []
    for jobs, order in ((1, [0, 1, 2]), (3, [0, 1, 2])):
        out_path = tmp_path / f"f{jobs}.png"
        code, out, _ = run(capsys, "fuse", "--frames", *[frames[i] for i in order], "--poses",
                           scene_dir / "lidar_poses.txt", "--intrinsics", f"{K.fx},{K.fy},{K.cx},{K.cy}",
                           "--out", out_path, "--jobs", jobs)
        assert code == 0
        outs.append(out_path.read_bytes())
    assert outs[0] == outs[1]
    fused = dataio.read_depth_png16(tmp_path / "f1.png")
    single = dataio.read_depth_png16(frames[0])
    assert fused.valid.sum() >= 2 * single.valid.sum()


def test_refine_command(scene_dir, tmp_path, capsys):
    code, out, _ = run(capsys, "refine", "--manifest", scene_dir / "manifest.txt", "--init-depth",
                       scene_dir / "depth_init.png", "--true-depth", scene_dir / "depth_true.png",
                       "--iters", 300, "--out", tmp_path / "r.png", "--trace", tmp_path / "t.csv")
    assert code == 0
    rep = parse_report(out.replace(" ", "\n"))
    assert rep["final_rmse"] < rep["initial_rmse"]
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "iter,l_ir,l_ds,l_tm,l_dd,total"
    assert dataio.read_depth_png16(tmp_path / "r.png").valid.all()


def test_missing_inputs_reported(capsys):
    code, _, err = run(capsys, "warp", "--depth", "x.png", "--out", "y.png")
    assert code != 0 and "--manifest" in err


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "semidepth.cli", "convert", "--scale", "64", "--depth", "30"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout == "0.212545879\n"
