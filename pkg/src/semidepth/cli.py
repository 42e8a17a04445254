"""Command-line entry point: ``semidepth <subcommand> ...``.

Any flag may also come from ``--config FILE`` (``key = value`` lines, key is
the flag name without leading dashes); command-line values win.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib.metadata import version
from pathlib import Path

import numpy as np

from . import dataio, kernels
from .conversion import RangeError, depth_to_disparity, disparity_to_depth, map_to_disparity
from .core import (
    CameraIntrinsics,
    DepthMap,
    DepthRange,
    DisparityMap,
    ErrorMap,
    InvariantError,
    MotionParams,
    Rigid3,
    SparseDepth,
)
from .geometry import fuse_sparse_frames, motion_to_rigid, warp_image
from .losses import (
    LossConfig,
    SsimConfig,
    TERMS,
    dense_depth_loss,
    image_reconstruction_loss,
    motion_target,
    smoothness_loss,
    transform_supervision_loss,
)
from .metrics import EvalOptions, MetricError, apply_scale, evaluate_dataset, global_scale_statistics, image_report, median_scale
from .refine import RefineConfig, init_latent, refine_depth
from .synth import lidar_frames, plane_scene


class CliError(Exception):
    pass


def _floats(text: str, n: int | None = None, name: str = "value") -> list[float]:
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{name}: expected numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"{name}: expected {n} numbers, got {len(vals)}")
    return vals


def _range_arg(text):
    return tuple(_floats(text, 2, "range"))


def _intrinsics_arg(text):
    return CameraIntrinsics(*_floats(text, 4, "intrinsics"))


def _terms_arg(text):
    terms = frozenset(t.strip() for t in text.split(",") if t.strip())
    unknown = terms - set(TERMS)
    if unknown or not terms:
        raise argparse.ArgumentTypeError(f"loss terms must be a comma list from {','.join(TERMS)}")
    return terms


def _fmt(v: float) -> str:
    s = f"{v:.9g}"
    return s if any(ch in s for ch in ".en") else s + ".0"


def _depth_range(args) -> DepthRange:
    d_min, d_max = args.range
    return DepthRange(d_min, d_max, args.scale)


def _add_range(p):
    p.add_argument("--range", type=_range_arg, default=(0.1, 100.0), metavar="DMIN,DMAX")
    p.add_argument("--scale", type=float, default=32.0)


def _add_loss_flags(p, default_terms="ir,ds,tm,dd"):
    p.add_argument("--loss-terms", type=_terms_arg, default=_terms_arg(default_terms))
    p.add_argument("--alpha", type=float, default=0.85)
    p.add_argument("--ssim-window", type=int, default=3)
    p.add_argument("--smoothness-mode", choices=("edge_aware", "literal"), default="edge_aware")


def _loss_config(args) -> LossConfig:
    return LossConfig(args.loss_terms, SsimConfig(window=args.ssim_window, alpha=args.alpha), args.smoothness_mode)


def _add_sample_flags(p):
    g = p.add_argument_group("sample (manifest or explicit paths)")
    g.add_argument("--manifest")
    g.add_argument("--index", type=int, default=0, help="manifest sample index")
    g.add_argument("--image-k")
    g.add_argument("--image-k1")
    g.add_argument("--intrinsics", type=_intrinsics_arg, metavar="FX,FY,CX,CY")
    g.add_argument("--pose-file")
    g.add_argument("--pose-index", type=int, default=0)
    g.add_argument("--dense")
    g.add_argument("--error-map")
    g.add_argument("--sparse")


def _load_sample(args) -> dict:
    if args.manifest:
        samples = dataio.read_manifest(args.manifest)
        if not 0 <= args.index < len(samples):
            raise CliError(f"manifest has {len(samples)} samples, index {args.index} out of range")
        return samples[args.index].load()
    missing = [f for f in ("image_k", "image_k1", "intrinsics", "pose_file") if getattr(args, f) is None]
    if missing:
        raise CliError("need --manifest or all of " + ", ".join("--" + m.replace("_", "-") for m in missing))
    poses = dataio.read_pose_file(args.pose_file)
    if not 0 <= args.pose_index < len(poses):
        raise CliError(f"{args.pose_file}: pose index {args.pose_index} out of range")
    return {
        "image_k": dataio.read_image(args.image_k),
        "image_k1": dataio.read_image(args.image_k1),
        "K": args.intrinsics,
        "ego": poses[args.pose_index],
        "dense_depth": dataio.read_depth_png16(args.dense) if args.dense else None,
        "error_map": dataio.read_error_map(args.error_map) if args.error_map else None,
        "sparse_gt": dataio.read_depth_png16(args.sparse) if args.sparse else None,
    }


# --- commands -----------------------------------------------------------------


def cmd_convert(args) -> int:
    r = _depth_range(args)
    if args.x is not None:
        print(_fmt(disparity_to_depth(args.x, r)))
    elif args.depth is not None:
        print(_fmt(depth_to_disparity(args.depth, r)))
    elif args.x_map is not None:
        x = DisparityMap(dataio.read_error_map(args.x_map).err)
        d = disparity_to_depth(x.x, r)
        dataio.write_depth_png16(_require_out(args), DepthMap(d))
    elif args.depth_map is not None:
        x = map_to_disparity(dataio.read_depth_png16(args.depth_map), r)
        dataio.write_error_map(_require_out(args), ErrorMap(x.x))
    else:
        raise CliError("give one of --x, --depth, --x-map, --depth-map")
    return 0


def _require_out(args):
    if not args.out:
        raise CliError("--out is required for map conversion")
    return args.out


def cmd_warp(args) -> int:
    s = _load_sample(args)
    depth = dataio.read_depth_png16(args.depth)
    res = warp_image(s["image_k1"], depth, s["ego"], s["K"])
    dataio.write_image(args.out, res.warped)
    if args.mask_out:
        dataio.write_mask(args.mask_out, res.mask)
    print(f"warped {int(res.mask.sum())}/{res.mask.size} pixels -> {args.out}")
    return 0


def cmd_losses(args) -> int:
    s = _load_sample(args)
    r = _depth_range(args)
    cfg = _loss_config(args)
    depth = dataio.read_depth_png16(args.depth)
    motion = MotionParams.from_vector(args.motion) if args.motion else MotionParams.from_vector(motion_target(s["ego"], r))
    out = dict.fromkeys(("l_ir", "l_ds", "l_tm", "l_dd"), 0.0)
    if "ir" in cfg.terms:
        T = motion_to_rigid(motion)
        scaled = DepthMap(depth.depth / r.s, depth.valid)
        out["l_ir"], _ = image_reconstruction_loss(s["image_k"], warp_image(s["image_k1"], scaled, T, s["K"]), cfg.ssim)
    if "ds" in cfg.terms:
        out["l_ds"] = smoothness_loss(map_to_disparity(depth, r), s["image_k"], cfg.smoothness_mode)
    if "tm" in cfg.terms:
        out["l_tm"] = transform_supervision_loss(motion, s["ego"], r)
    if "dd" in cfg.terms:
        if s["dense_depth"] is None:
            raise CliError("dense depth term requested but no dense depth given")
        scaled = DepthMap(depth.depth / r.s, depth.valid)
        out["l_dd"], _ = dense_depth_loss(scaled, s["dense_depth"], s["error_map"], r)
    if args.json:
        print(json.dumps(out, indent=2))
    else:
        for k, v in out.items():
            print(f"{k}={v!r}")
    return 0


def _eval_pairs(args):
    samples = dataio.read_manifest(args.manifest)
    pred_dir = Path(args.pred_dir)

    def load(sample):
        if sample.sparse_gt is None:
            raise CliError(f"manifest line {sample.line}: no ground-truth depth")
        pred_path = pred_dir / (Path(sample.image_k).stem + ".png")
        return dataio.read_depth_png16(pred_path), dataio.read_depth_png16(sample.sparse_gt)

    results, failures = [], []
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        futures = [pool.submit(load, smp) for smp in samples]
        for i, fut in enumerate(futures):
            try:
                results.append((i, *fut.result()))
            except (OSError, ValueError, CliError) as exc:
                failures.append(f"sample {i}: {exc}")
    return results, failures


def _eval_options(args) -> EvalOptions:
    crop = tuple(int(v) for v in _floats(args.crop, 4, "crop")) if args.crop else None
    clamp = tuple(_floats(args.clamp, 2, "clamp")) if args.clamp else None
    return EvalOptions(crop=crop, clamp=clamp, pooled=args.pooled)


def cmd_eval(args) -> int:
    options = _eval_options(args)
    loaded, failures = _eval_pairs(args)
    pairs = []
    if args.median_scale == "global" and loaded:
        stats = global_scale_statistics([(p, g) for _, p, g in loaded], options)
        factor = stats.mean
        print(f"global median scale {factor!r}")
    for i, pred, gt in loaded:
        try:
            if args.median_scale == "per-image":
                pred = apply_scale(pred, median_scale(pred, gt, options))
            elif args.median_scale == "global":
                pred = apply_scale(pred, factor)
            image_report(pred, gt, options)
            pairs.append((pred, gt))
        except MetricError as exc:
            failures.append(f"sample {i}: {exc}")
    if pairs:
        report = evaluate_dataset(pairs, options)
        text = report.to_text()
        print(text, end="")
        if args.out:
            Path(args.out + ".txt").write_text(text)
            Path(args.out + ".json").write_text(report.to_json() + "\n")
    for f in failures:
        print(f"error: {f}", file=sys.stderr)
    return 1 if failures or not pairs else 0


def cmd_scale_stats(args) -> int:
    options = _eval_options(args)
    loaded, failures = _eval_pairs(args)
    if not loaded:
        for f in failures:
            print(f"error: {f}", file=sys.stderr)
        return 1
    stats = global_scale_statistics([(p, g) for _, p, g in loaded], options)
    print(f"images={len(stats.per_image_ratios)}")
    print(f"mean={stats.mean!r}")
    print(f"std={stats.std!r}")
    print(stats.histogram(bins=args.bins))
    for f in failures:
        print(f"error: {f}", file=sys.stderr)
    return 1 if failures else 0


def cmd_refine(args) -> int:
    s = _load_sample(args)
    r = _depth_range(args)
    shape = s["image_k"].shape
    if args.init_depth:
        source = dataio.read_depth_png16(args.init_depth)
    elif args.init_sparse:
        if s["sparse_gt"] is None:
            raise CliError("--init-sparse needs sparse ground truth in the sample")
        source = s["sparse_gt"]
    else:
        source = args.init_disparity
    init = init_latent(source, r, shape)
    cfg = RefineConfig(
        max_iterations=args.iters,
        step=args.step,
        tolerance=args.tol,
        loss=_loss_config(args),
        depth_range=r,
        motion=args.motion,
        normalizer_beta=args.normalizer_beta,
        normalizer_mode=args.normalizer,
    )
    dense = s["dense_depth"]
    err = s["error_map"]
    depth, motion, trace = refine_depth(s["image_k"], s["image_k1"], s["K"], s["ego"], dense, err, init, cfg)
    dataio.write_depth_png16(args.out, depth)
    if args.trace:
        trace.write_csv(args.trace)
    print(f"termination={trace.reason} iterations={trace.iterations}")
    if trace.failed_iteration is not None:
        print(f"failed_iteration={trace.failed_iteration} ({trace.message})")
    print("motion=" + " ".join(repr(float(v)) for v in motion.vector))
    if args.true_depth:
        true = dataio.read_depth_png16(args.true_depth)
        sel = true.valid
        d0 = init.depth(r).depth
        rmse0 = float(np.sqrt(np.mean((d0[sel] - true.depth[sel]) ** 2)))
        rmse1 = float(np.sqrt(np.mean((depth.depth[sel] - true.depth[sel]) ** 2)))
        print(f"initial_rmse={rmse0!r}")
        print(f"final_rmse={rmse1!r}")
    return 0 if trace.reason != "diverged" else 1


def cmd_fuse(args) -> int:
    poses = dataio.read_pose_file(args.poses)
    if len(poses) < len(args.frames):
        raise CliError(f"{args.poses}: {len(poses)} poses for {len(args.frames)} frames")
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        maps = list(pool.map(dataio.read_depth_png16, args.frames))
    frames = [(SparseDepth.from_depth_map(m), T) for m, T in zip(maps, poses)]
    fused = fuse_sparse_frames(frames, args.intrinsics)
    dataio.write_depth_png16(args.out, fused)
    print(f"reference_samples={len(frames[0][0]) if frames else 0} fused_samples={len(fused)}")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    r = _depth_range(args)
    scene = plane_scene(seed=args.seed, height=args.height, width=args.width, depth=args.depth,
                        tilt=tuple(args.tilt), depth_range=r)
    rng = np.random.default_rng(args.seed + 1)
    dataio.write_image(out / "img_k.png", scene.image_k)
    dataio.write_image(out / "img_k1.png", scene.image_k1)
    dataio.write_depth_png16(out / "depth_true.png", scene.depth_k)
    dataio.write_depth_png16(out / "depth_init.png", scene.perturbed_depth(rng, args.noise))
    dataio.write_depth_png16(out / "dense.png", scene.depth_k)
    dataio.write_error_map(out / "err.png", scene.error_map(0.0))
    dataio.write_pose_file(out / "poses.txt", [scene.ego])
    lidar_poses = [Rigid3()] + [
        Rigid3(np.eye(3), np.array([0.0, dy, 0.0])) for dy in (args.depth / scene.K.fy * 2, args.depth / scene.K.fy * 4)
    ]
    frames = lidar_frames(scene.plane, args.height, args.width, scene.K, lidar_poses, seed=args.seed)
    for i, (sd, _) in enumerate(frames):
        dataio.write_depth_png16(out / f"lidar_{i}.png", sd)
    dataio.write_pose_file(out / "lidar_poses.txt", lidar_poses)
    K = scene.K
    sample = dataio.SamplePair(out / "img_k.png", out / "img_k1.png", K, out / "poses.txt", 0,
                               sparse_gt=out / "lidar_0.png", dense_depth=out / "dense.png", error_map=out / "err.png")
    dataio.write_manifest(out / "manifest.txt", [sample])
    print(f"wrote synthetic scene to {out}")
    return 0


# --- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semidepth", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="plain-text key = value defaults")
    parser.add_argument("--version", action="store_true", help="print kernel backend and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("convert", help="disparity <-> depth")
    _add_range(p)
    p.add_argument("--x", type=float)
    p.add_argument("--depth", type=float)
    p.add_argument("--x-map", help="16-bit disparity PNG (x * 65535)")
    p.add_argument("--depth-map", help="16-bit depth PNG")
    p.add_argument("--out")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("warp", help="inverse-warp frame k+1 into frame k")
    _add_sample_flags(p)
    p.add_argument("--depth", required=True, help="frame-k depth PNG")
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out")
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("losses", help="print the four loss terms")
    _add_sample_flags(p)
    _add_range(p)
    _add_loss_flags(p)
    p.add_argument("--depth", required=True, help="predicted frame-k depth PNG (metric)")
    p.add_argument("--motion", type=lambda t: _floats(t, 6, "motion"), help="6 scaled motion parameters")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_losses)

    for name, func, help_text in (("eval", cmd_eval, "depth metrics over a manifest"),
                                  ("scale-stats", cmd_scale_stats, "median-ratio statistics")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("manifest")
        p.add_argument("--pred-dir", required=True)
        p.add_argument("--crop", help="top,bottom,left,right")
        p.add_argument("--clamp", help="min,max applied to predictions")
        p.add_argument("--pooled", action="store_true", help="pool pixels for non-SILog metrics")
        p.add_argument("--jobs", type=int, default=1)
        if name == "eval":
            p.add_argument("--median-scale", choices=("per-image", "global", "off"), default="off")
            p.add_argument("--out", help="report path prefix (.txt and .json)")
        else:
            p.add_argument("--bins", type=int, default=10)
        p.set_defaults(func=func)

    p = sub.add_parser("refine", help="direct depth refinement")
    _add_sample_flags(p)
    _add_range(p)
    _add_loss_flags(p, "ir,ds")
    p.add_argument("--init-depth")
    p.add_argument("--init-sparse", action="store_true")
    p.add_argument("--init-disparity", type=float, default=0.5)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--step", type=float, default=1e-2)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--motion", choices=("fixed", "joint"), default="fixed")
    p.add_argument("--normalizer", choices=("ema", "batch"), default="ema")
    p.add_argument("--normalizer-beta", type=float, default=0.99)
    p.add_argument("--true-depth", help="report RMSE against this depth PNG")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("fuse", help="fuse sparse depth frames into the first frame")
    p.add_argument("--frames", nargs="+", required=True)
    p.add_argument("--poses", required=True, help="pose file, record i maps frame i into the reference")
    p.add_argument("--intrinsics", type=_intrinsics_arg, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("synth", help="write a synthetic textured-plane scene")
    _add_range(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--depth", type=float, default=10.0)
    p.add_argument("--tilt", type=lambda t: _floats(t, 2, "tilt"), default=[0.3, 0.2])
    p.add_argument("--noise", type=float, default=0.2)
    p.set_defaults(func=cmd_synth)
    return parser


def _read_config(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.lstrip("-").replace("-", "_")] = value
    return out


def _apply_config(parser, argv, config_path) -> None:
    """Turn config entries into subparser defaults (converted by each flag's type)."""
    entries = _read_config(config_path)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in argv if a in sub_action.choices), None)
    if command is None:
        return
    sp = sub_action.choices[command]
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, raw in entries.items():
        if key not in actions:
            raise CliError(f"{config_path}: unknown option {key!r} for {command}")
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.nargs in ("+", "*"):
            defaults[key] = [action.type(v) if action.type else v for v in raw.split()]
        else:
            defaults[key] = action.type(raw) if action.type else raw
        action.required = False
    sp.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre, _ = parser.parse_known_args(argv)
        if pre.config:
            _apply_config(parser, argv, pre.config)
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except (CliError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.version:
            print(f"semidepth {version('artifact')} (kernels: {kernels.BACKEND})")
            return 0
        if args.command is None:
            parser.print_help()
            return 2
        return args.func(args)
    except (CliError, RangeError, MetricError, InvariantError, dataio.FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
