"""Acceptance gate: one test per criterion, each printing a single pass/fail line."""

import itertools
import time

import numpy as np
import pytest

from semidepth import dataio
from semidepth.cli import main as cli_main
from semidepth.conversion import depth_to_disparity
from semidepth.core import CameraIntrinsics, DepthMap, DepthRange, MotionParams, Rigid3
from semidepth.geometry import (
    back_project,
    fuse_sparse_frames,
    motion_to_rigid,
    project_points,
    rigid_to_motion,
    warp_arrays,
)
from semidepth.losses import TERMS, LossBreakdown, LossConfig, NormalizerState, evaluate, total_loss
from semidepth.metrics import apply_scale, global_scale_statistics, median_scale, silog_image, standard_metrics
from semidepth.refine import scale_ambiguity_probe
from semidepth.synth import Plane, default_intrinsics, lidar_frames, plane_scene

from conftest import random_scene, record_criterion, relative_error

pytestmark = pytest.mark.acceptance


def test_criterion_1_disparity_conversion():
    t0 = time.perf_counter()
    unit = DepthRange(0.1, 100.0, 1.0)
    s64 = DepthRange(0.1, 100.0, 64.0)
    got_unit = [depth_to_disparity(d, unit) for d in (30.0, 40.0, 50.0)]
    got_64 = [depth_to_disparity(d, s64) for d in (30.0, 40.0, 50.0)]
    err_unit = max(abs(g - e) for g, e in zip(got_unit, (0.0023357, 0.0015015, 0.0010010)))
    err_64 = max(abs(g - e) for g, e in zip(got_64, (0.2125, 0.1591, 0.1271)))
    elapsed = time.perf_counter() - t0
    ok = err_unit <= 5e-7 and err_64 <= 5e-4 and elapsed < 1.0
    record_criterion(1, "disparity conversion", ok,
                     f"s=1 max err {err_unit:.2e} (<=5e-7), s=64 max err {err_64:.2e} (<=5e-4), {elapsed:.3f}s")
    assert ok


def test_criterion_2_silog_scale_invariance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        gt = DepthMap(rng.uniform(0.5, 80.0, (32, 32)))
        pred = DepthMap(gt.depth * np.exp(rng.normal(0, 0.3, (32, 32))))
        c = rng.uniform(0.01, 100.0)
        worst = max(worst, abs(silog_image(DepthMap(pred.depth * c), gt) - silog_image(pred, gt)))
    hand = silog_image(DepthMap([[1.0, np.e]]), DepthMap([[1.0, 1.0]]))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and abs(hand - 0.25) <= 1e-12 and elapsed < 10.0
    record_criterion(2, "SILog scale invariance", ok,
                     f"max |dSILog| {worst:.2e} (<1e-10), hand case {hand!r}, {elapsed:.2f}s")
    assert ok


def _fd_per_term(inputs, u, m, h=1e-5):
    """Central differences of each raw term w.r.t. every latent pixel and motion component."""
    cfg = LossConfig(frozenset(TERMS))

    def terms_at(uu, mm):
        return np.array(evaluate(inputs, uu, mm, cfg, gradients=False).breakdown.terms())

    g_u = np.zeros((4,) + u.shape)
    for idx in np.ndindex(u.shape):
        up, dn = u.copy(), u.copy()
        up[idx] += h
        dn[idx] -= h
        g_u[(slice(None),) + idx] = (terms_at(up, m) - terms_at(dn, m)) / (2 * h)
    g_m = np.zeros((4, 6))
    for k in range(6):
        mp, mn = m.copy(), m.copy()
        mp[k] += h
        mn[k] -= h
        g_m[:, k] = (terms_at(u, mp) - terms_at(u, mn)) / (2 * h)
    return g_u, g_m


def _kink_signature(inputs, u, m):
    """Bilinear cell of every warped pixel plus the sign of each photometric residual.

    The photometric loss is smooth wherever none of these change; cells are
    recomputed with 4x4 transforms, residual signs use the forward warp.
    """
    r, K = inputs.depth_range, inputs.K
    depth = 1.0 / (r.a / (1.0 + np.exp(-u)) + r.b)
    h, w = u.shape
    rows, cols = np.mgrid[0:h, 0:w]
    pts = np.stack([(cols - K.cx) / K.fx * depth, (rows - K.cy) / K.fy * depth, depth, np.ones_like(depth)])
    T = motion_to_rigid(MotionParams.from_vector(m))
    q = np.tensordot(T.matrix, pts, axes=1)
    warped, mask, _ = warp_arrays(inputs.image_k1.data, depth, np.ones((h, w), bool), T.rotation,
                                  T.translation, K)
    signs = np.where(mask[:, :, None], np.sign(warped - inputs.image_k.data), 0.0)
    return np.floor(K.fx * q[0] / q[2] + K.cx), np.floor(K.fy * q[1] / q[2] + K.cy), signs


def _motion_stencil_is_smooth(inputs, u, m, h=1e-5):
    """True when the photometric loss has no kink inside the motion FD stencil."""
    centre = _kink_signature(inputs, u, m)
    for k in range(6):
        for sign in (1.0, -1.0):
            mm = m.copy()
            mm[k] += sign * h
            if any(not np.array_equal(a, b) for a, b in zip(_kink_signature(inputs, u, mm), centre)):
                return False
    return True


def test_criterion_3_gradient_correctness():
    t0 = time.perf_counter()
    subsets = [frozenset(c) for n in range(1, 5) for c in itertools.combinations(TERMS, n)]
    worst_fraction, worst_motion, failures, checked_pixels = 1.0, 0.0, 0, 0
    # bilinear cell edges and L1 sign changes are kinks where central differences
    # are not a derivative oracle; scenes whose motion stencil straddles one are skipped
    scenes, skipped, seed = [], [], 1000
    while len(scenes) < 50:
        scene = random_scene(seed)
        seed += 1
        (scenes if _motion_stencil_is_smooth(*scene) else skipped).append(scene)
    # skipped scenes still agree with a stencil narrow enough to clear the kink
    skipped_worst = 0.0
    for inputs, u, m in skipped:
        cfg = LossConfig(frozenset(TERMS))
        ev = evaluate(inputs, u, m, cfg)
        fd = np.zeros(6)
        for k in range(6):
            mp, mn = m.copy(), m.copy()
            mp[k] += 1e-7
            mn[k] -= 1e-7
            fd[k] = (evaluate(inputs, u, mp, cfg, gradients=False).total
                     - evaluate(inputs, u, mn, cfg, gradients=False).total) / 2e-7
        skipped_worst = max(skipped_worst, float(relative_error(ev.grad_motion, fd).max()))
    for inputs, u, m in scenes:
        fd_u, fd_m = _fd_per_term(inputs, u, m)
        raw = np.array(evaluate(inputs, u, m, LossConfig(frozenset(TERMS)), gradients=False).breakdown.terms())
        for subset in subsets:
            # normalized objective at a fresh state: each enabled term weighted by 1/|term|
            w = np.array([1.0 / raw[k] if name in subset else 0.0 for k, name in enumerate(TERMS)])
            ev = evaluate(inputs, u, m, LossConfig(subset), weights=w)
            fd_lat = np.tensordot(w, fd_u, axes=1)
            fd_mot = w @ fd_m
            sel = ev.mask if "ir" in subset else np.ones(u.shape, bool)
            rel = relative_error(ev.grad_latent, fd_lat)[sel]
            fraction = float(np.mean(rel < 1e-4))
            motion_rel = float(relative_error(ev.grad_motion, fd_mot).max())
            worst_fraction = min(worst_fraction, fraction)
            worst_motion = max(worst_motion, motion_rel)
            checked_pixels += int(sel.sum())
            if fraction < 0.99 or motion_rel >= 1e-4:
                failures += 1
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and skipped_worst < 1e-4 and elapsed < 120.0
    record_criterion(3, "gradient correctness", ok,
                     f"50 scenes ({len(skipped)} skipped with a kink in the motion stencil, "
                     f"those match a 1e-7 stencil to {skipped_worst:.1e}) x {len(subsets)} term subsets, {checked_pixels} pixel checks, "
                     f"worst pixel pass fraction {worst_fraction:.4f} (>=0.99), "
                     f"worst motion rel err {worst_motion:.2e} (<1e-4), {elapsed:.1f}s")
    assert ok


def test_criterion_4_scale_ambiguity_probe():
    t0 = time.perf_counter()
    scene = plane_scene(seed=0, tilt=(0.3, 0.2))
    rows = []
    ok = True
    for c in (0.5, 2.0, 10.0):
        rep = scale_ambiguity_probe(scene.image_k, scene.image_k1, scene.K, scene.depth_k, scene.ego, c,
                                    scene.depth_range)
        ok &= rep.ir_difference < 1e-6 and rep.total_scaled > rep.total_base
        rows.append(f"c={c:g}: |dL_ir| {rep.ir_difference:.1e}, total {rep.total_base:.4g} -> {rep.total_scaled:.4g}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30.0
    record_criterion(4, "scale-ambiguity probe", ok, "; ".join(rows) + f"; {elapsed:.2f}s")
    assert ok


def _rmse(path, truth):
    d = dataio.read_depth_png16(path)
    sel = truth.valid
    return float(np.sqrt(np.mean((d.depth[sel] - truth.depth[sel]) ** 2)))


def test_criterion_5_refinement_efficacy(tmp_path, capsys):
    t0 = time.perf_counter()
    scene_dir = tmp_path / "scene"
    assert cli_main(["synth", "--out", str(scene_dir), "--seed", "0"]) == 0
    truth = dataio.read_depth_png16(scene_dir / "depth_true.png")
    rmse0 = _rmse(scene_dir / "depth_init.png", truth)
    common = ["refine", "--manifest", str(scene_dir / "manifest.txt"), "--init-depth",
              str(scene_dir / "depth_init.png"), "--iters", "2000"]
    code_a = cli_main(common + ["--loss-terms", "ir,ds", "--out", str(tmp_path / "a.png")])
    code_b = cli_main(common + ["--loss-terms", "ir,ds,dd", "--out", str(tmp_path / "b.png")])
    capsys.readouterr()
    rmse_a = _rmse(tmp_path / "a.png", truth)
    rmse_b = _rmse(tmp_path / "b.png", truth)
    depth_scale = float(truth.depth[truth.valid].mean())
    elapsed = time.perf_counter() - t0
    ok = code_a == 0 and code_b == 0 and rmse_a <= 0.5 * rmse0 and rmse_b < 0.01 * depth_scale and elapsed < 300
    record_criterion(5, "refinement efficacy", ok,
                     f"initial RMSE {rmse0:.4f} m; ir+ds {rmse_a:.4f} m (ratio {rmse_a / rmse0:.3f}, <=0.5); "
                     f"ir+ds+dd {rmse_b:.4f} m ({100 * rmse_b / depth_scale:.3f}% of {depth_scale:.2f} m, <1%); "
                     f"{elapsed:.1f}s")
    assert ok


def test_criterion_6_round_trips(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    motion_err = rigid_err = proj_err = pose_err = png_err = 0.0
    proj_pixels_ok = True
    K = CameraIntrinsics(20.0, 19.0, 7.5, 5.5)
    for i in range(1000):
        axis = rng.normal(size=3)
        m = MotionParams(axis / np.linalg.norm(axis) * rng.uniform(0, np.pi - 1e-3), rng.normal(0, 3, 3))
        motion_err = max(motion_err, np.abs(rigid_to_motion(motion_to_rigid(m)).vector - m.vector).max())
        T = motion_to_rigid(MotionParams(rng.normal(0, 1.0, 3), rng.normal(0, 3, 3)))
        rigid_err = max(rigid_err, np.abs(motion_to_rigid(rigid_to_motion(T)).matrix - T.matrix).max())

        dm = DepthMap(rng.uniform(0.5, 80.0, (12, 16)), rng.random((12, 16)) < 0.7)
        sd = project_points(back_project(dm, K), K, 12, 16)
        ref = dm.depth[dm.valid]
        rows, cols = np.nonzero(dm.valid)
        proj_pixels_ok &= np.array_equal(sd.rows, rows) and np.array_equal(sd.cols, cols)
        proj_err = max(proj_err, float(np.max(np.abs(sd.depth - ref) / ref)))

        dataio.write_pose_file(tmp_path / "p.txt", [T])
        pose_err = max(pose_err, np.abs(dataio.read_pose_file(tmp_path / "p.txt")[0].matrix - T.matrix).max())

        d = DepthMap(rng.uniform(0.01, 255.0, (8, 8)), rng.random((8, 8)) < 0.9)
        dataio.write_depth_png16(tmp_path / "d.png", d)
        back = dataio.read_depth_png16(tmp_path / "d.png")
        png_err = max(png_err, float(np.abs(back.depth - d.depth)[d.valid].max()))
    elapsed = time.perf_counter() - t0
    ok = (motion_err <= 1e-9 and rigid_err <= 1e-9 and proj_pixels_ok and proj_err <= 1e-9
          and pose_err <= 1e-9 and png_err <= 1 / 512 and elapsed < 30)
    record_criterion(6, "geometry round-trips", ok,
                     f"1000 each: motion {motion_err:.1e}, rigid {rigid_err:.1e}, project/back-project "
                     f"{proj_err:.1e} (pixels {'exact' if proj_pixels_ok else 'MISMATCH'}), pose file {pose_err:.1e}, "
                     f"depth PNG {png_err:.2e} (<= {1 / 512:.2e}); {elapsed:.1f}s")
    assert ok


def test_criterion_7_fusion_density():
    t0 = time.perf_counter()
    h, w = 48, 64
    K = default_intrinsics(h, w)
    depth = 10.0
    # static wall facing the reference camera: every fused point keeps exact depth
    plane = Plane.tilted(depth)
    poses = [
        Rigid3(),
        motion_to_rigid(MotionParams([0.004, 0.0, 0.0], [0.02, 0.31, 0.0])),
        motion_to_rigid(MotionParams([-0.003, 0.002, 0.0], [-0.03, 0.67, 0.0])),
    ]
    frames = lidar_frames(plane, h, w, K, poses, row_step=6, keep=0.9, seed=7)
    fused = fuse_sparse_frames(frames, K)
    single = len(frames[0][0])
    truth = np.full((h, w), depth)
    max_err = float(np.abs(fused.depth - truth[fused.rows, fused.cols]).max())
    invariant = True
    for order in itertools.permutations(range(3)):
        other = fuse_sparse_frames([frames[i] for i in order], K)
        invariant &= (np.array_equal(other.rows, fused.rows) and np.array_equal(other.cols, fused.cols)
                      and np.array_equal(other.depth, fused.depth))
    elapsed = time.perf_counter() - t0
    ok = len(fused) >= 2 * single and max_err < 1e-3 and invariant and elapsed < 10
    record_criterion(7, "fusion density", ok,
                     f"fused {len(fused)} vs single {single} samples ({len(fused) / single:.2f}x, >=2x), "
                     f"max depth error {max_err:.1e} m (<1e-3), order invariant: {invariant}; {elapsed:.2f}s")
    assert ok


def test_criterion_8_median_scaling():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(200):
        gt = DepthMap(rng.uniform(1.0, 80.0, (16, 16)), rng.random((16, 16)) < 0.6)
        pred = DepthMap(gt.depth * np.exp(rng.normal(0, 0.2, (16, 16))), gt.valid)
        k = float(np.exp(rng.uniform(np.log(0.01), np.log(100.0))))
        base = standard_metrics(apply_scale(pred, median_scale(pred, gt)), gt)
        off = DepthMap(pred.depth * k, pred.valid)
        restored = standard_metrics(apply_scale(off, median_scale(off, gt)), gt)
        worst = max(worst, abs(restored["abs_rel"] - base["abs_rel"]), abs(restored["rmse"] - base["rmse"]))
    ratios_true = rng.normal(28.027, 3.0, 200)
    pairs = []
    for r in ratios_true:
        gt = DepthMap(rng.uniform(5.0, 80.0, (8, 8)))
        pairs.append((DepthMap(gt.depth / r), gt))
    stats = global_scale_statistics(pairs)
    ok = worst <= 1e-9 and abs(stats.mean - 28.027) <= 0.5
    record_criterion(8, "median-scaling equivalences", ok,
                     f"per-image rescaling max |d AbsRel|,|d RMSE| {worst:.1e} (<=1e-9); "
                     f"global mean ratio {stats.mean:.4f} vs 28.027 (+-0.5), std {stats.std:.3f}")
    assert ok


def test_criterion_9_normalizer_fixed_point():
    terms = LossBreakdown(0.37, 12.5, 0.0042, 180.0)
    worst_term = worst_total = 0.0
    # from a fresh state and from a state seeded with magnitudes far from the terms
    _, seeded = total_loss(LossBreakdown(30.0, 0.2, 0.5, 2.0), NormalizerState())
    for state in (NormalizerState(), seeded):
        for _ in range(2000):
            total, state = total_loss(terms, state)
        normalized = np.array(terms.terms()) / np.array(state.magnitudes)
        worst_term = max(worst_term, float(np.abs(normalized - 1).max()))
        worst_total = max(worst_total, abs(total - 4.0))
    ok = worst_term <= 1e-6 and worst_total <= 1e-5
    record_criterion(9, "loss normalization fixed point", ok,
                     f"max |term/|term| - 1| {worst_term:.1e} (<=1e-6), max |total - 4| {worst_total:.1e} (<=1e-5)")
    assert ok
