"""Direct per-pixel depth refinement by first-order minimization of the total loss.

The free variable is a latent field ``u`` with disparity ``x = sigmoid(u)``,
so every iterate stays inside [0, 1] and the depth range.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .conversion import depth_to_disparity
from .core import CameraIntrinsics, DepthMap, DepthRange, ErrorMap, ImageBuffer, MotionParams, Rigid3, SparseDepth
from .geometry import warp_image
from .losses import (
    EmptyMaskError,
    LossBreakdown,
    LossConfig,
    LossInputs,
    NormalizerState,
    evaluate,
    image_reconstruction_loss,
    motion_target,
    normalizer_weights,
    sigmoid,
    total_loss,
    transform_supervision_loss,
)


@dataclass(frozen=True)
class LatentField:
    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64)
        if u.ndim != 2 or not np.isfinite(u).all():
            raise ValueError("latent field must be a finite 2-D array")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    def disparity(self) -> np.ndarray:
        return sigmoid(self.u)

    def depth(self, r: DepthRange) -> DepthMap:
        """Metric depth ``s / (a x + b)``."""
        return DepthMap(r.s / (r.a * self.disparity() + r.b))


def _logit(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x) - np.log1p(-x)


def init_latent(source, r: DepthRange, dims: tuple[int, int]) -> LatentField:
    """Latent field from a constant disparity, a dense DepthMap, or a SparseDepth seed.

    Invalid (dense) or unseeded (sparse) pixels take the lower median of the
    seed depths.
    """
    h, w = dims
    if isinstance(source, (int, float, np.floating)):
        x = np.full(dims, float(source))
    else:
        if isinstance(source, SparseDepth):
            source = source.to_depth_map()
        if not isinstance(source, DepthMap):
            raise TypeError(f"unsupported latent seed {type(source).__name__}")
        if source.shape != (h, w):
            raise ValueError(f"seed shape {source.shape} != {dims}")
        seeds = source.depth[source.valid]
        if len(seeds) == 0:
            raise ValueError("depth seed has no valid pixels")
        fill = np.sort(seeds)[(len(seeds) - 1) // 2]
        d = np.where(source.valid, source.depth, fill)
        bad = (d <= r.min_depth) | (d >= r.max_depth)
        if bad.any():
            raise ValueError(
                f"seed depth must lie strictly inside ({r.min_depth:g}, {r.max_depth:g}); "
                f"first offending pixel {tuple(int(i) for i in np.argwhere(bad)[0])}"
            )
        x = depth_to_disparity(d, r)
    u = _logit(x)
    if not np.isfinite(u).all():
        raise ValueError("disparity seed at 0 or 1 has an infinite latent value")
    return LatentField(u)


@dataclass(frozen=True)
class RefineConfig:
    max_iterations: int = 2000
    step: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    tolerance: float = 1e-7
    window: int = 10
    loss: LossConfig = LossConfig(terms=frozenset({"ir", "ds", "tm", "dd"}))
    depth_range: DepthRange = DepthRange()
    motion: Literal["fixed", "joint"] = "fixed"
    normalizer_beta: float = 0.99
    normalizer_mode: Literal["ema", "batch"] = "ema"

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.motion not in ("fixed", "joint"):
            raise ValueError(f"motion must be 'fixed' or 'joint', got {self.motion!r}")
        if self.max_iterations < 0 or self.window < 1:
            raise ValueError("max_iterations must be >= 0 and window >= 1")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    breakdown: LossBreakdown
    total: float


@dataclass
class RefineTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    iterations: int = 0
    reason: Literal["converged", "max_iter", "diverged"] = "max_iter"
    failed_iteration: int | None = None
    message: str = ""

    def totals(self) -> np.ndarray:
        return np.array([e.total for e in self.entries])

    def term(self, name: str) -> np.ndarray:
        return np.array([getattr(e.breakdown, f"l_{name}") for e in self.entries])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "l_ir", "l_ds", "l_tm", "l_dd", "total"])
            for e in self.entries:
                writer.writerow([e.iteration, *(repr(v) for v in e.breakdown.terms()), repr(e.total)])


class _Adam:
    def __init__(self, shape, cfg: RefineConfig):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.cfg = cfg

    def step(self, grad):
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad * grad
        mhat = self.m / (1 - c.beta1**self.t)
        vhat = self.v / (1 - c.beta2**self.t)
        return -c.step * mhat / (np.sqrt(vhat) + c.adam_eps)


def _known_weights(state: NormalizerState, terms) -> np.ndarray | None:
    """Normalizer weights usable before evaluating, or None if a magnitude is unknown."""
    if state.mode == "batch":
        return None
    w = np.zeros(4)
    for k, name in enumerate(("ir", "ds", "tm", "dd")):
        if name not in terms:
            continue
        m = state.magnitudes[k]
        if m is None:
            return None
        w[k] = 1.0 / m
    return w


def refine_depth(
    I_k: ImageBuffer,
    I_k1: ImageBuffer,
    K: CameraIntrinsics,
    ego: Rigid3,
    dense_gt: DepthMap | None,
    err: ErrorMap | None,
    init: LatentField,
    cfg: RefineConfig = RefineConfig(),
    initial_motion: MotionParams | None = None,
    callback=None,
) -> tuple[DepthMap, MotionParams, RefineTrace]:
    """Minimize the normalized total loss over the latent field (and motion if joint).

    Returns metric depth, the final scaled motion (translation / s) and the trace.
    """
    r = cfg.depth_range
    terms = cfg.loss.terms
    if "dd" in terms and dense_gt is None:
        raise ValueError("dense depth term enabled but no dense supervision given")
    if init.shape != I_k.shape:
        raise ValueError(f"latent shape {init.shape} != image shape {I_k.shape}")
    inputs = LossInputs(I_k, I_k1, K, ego, r, dense_gt, err)

    u = np.array(init.u)
    motion = motion_target(ego, r) if initial_motion is None else initial_motion.vector.copy()
    state = NormalizerState(beta=cfg.normalizer_beta, mode=cfg.normalizer_mode)
    opt_u = _Adam(u.shape, cfg)
    opt_m = _Adam(6, cfg)
    trace = RefineTrace()
    reference_w = None
    objective = []
    best_u, best_m = u.copy(), motion.copy()

    for it in range(cfg.max_iterations + 1):
        try:
            w = _known_weights(state, terms)
            if w is None:
                raw = evaluate(inputs, u, motion, cfg.loss, gradients=False)
                w = normalizer_weights(raw.breakdown, state)
            ev = evaluate(inputs, u, motion, cfg.loss, weights=w)
        except EmptyMaskError as exc:
            trace.reason, trace.failed_iteration, trace.message = "diverged", it, str(exc)
            break
        except ValueError as exc:  # non-finite terms rejected by LossBreakdown
            trace.reason, trace.failed_iteration, trace.message = "diverged", it, str(exc)
            break
        total, state = total_loss(ev.breakdown, state)
        if not (np.isfinite(total) and np.isfinite(ev.grad_latent).all() and np.isfinite(ev.grad_motion).all()):
            trace.reason, trace.failed_iteration, trace.message = "diverged", it, "non-finite loss or gradient"
            break
        trace.entries.append(TraceEntry(it, ev.breakdown, total))
        trace.iterations = it
        best_u, best_m = u.copy(), motion.copy()
        if callback is not None:
            callback(it, ev)

        if reference_w is None:
            reference_w = normalizer_weights(ev.breakdown, NormalizerState())
        objective.append(float(np.dot(reference_w, ev.breakdown.terms())))
        if objective[-1] == 0:
            trace.reason = "converged"
            break
        if len(objective) > cfg.window:
            # spread over the window, relative to the starting objective
            recent = objective[-1 - cfg.window:]
            change = max(recent) - min(recent)
            if change <= cfg.tolerance * objective[0]:
                trace.reason = "converged"
                break
        if it == cfg.max_iterations:
            trace.reason = "max_iter"
            break

        u = u + opt_u.step(ev.grad_latent)
        if cfg.motion == "joint":
            motion = motion + opt_m.step(ev.grad_motion)

    depth = LatentField(best_u).depth(r)
    return depth, MotionParams.from_vector(best_m), trace


@dataclass(frozen=True)
class ProbeReport:
    c: float
    l_ir_base: float
    l_ir_scaled: float
    l_tm_base: float
    l_tm_scaled: float

    @property
    def ir_difference(self) -> float:
        return abs(self.l_ir_scaled - self.l_ir_base)

    @property
    def total_base(self) -> float:
        return self.l_ir_base + self.l_tm_base

    @property
    def total_scaled(self) -> float:
        return self.l_ir_scaled + self.l_tm_scaled


def scale_ambiguity_probe(
    I_k: ImageBuffer,
    I_k1: ImageBuffer,
    K: CameraIntrinsics,
    depth: DepthMap,
    ego: Rigid3,
    c: float,
    r: DepthRange = DepthRange(),
    loss: LossConfig = LossConfig(),
) -> ProbeReport:
    """Photometric and motion-supervision losses at (depth, t) and at (c depth, c t).

    The motion term compares against the unscaled ``ego``; totals are plain
    sums of the two raw terms.
    """
    if c <= 0:
        raise ValueError(f"scale factor must be positive, got {c}")

    def at(factor):
        d = DepthMap(depth.depth * factor, depth.valid)
        T = Rigid3(ego.rotation, ego.translation * factor)
        l_ir, _ = image_reconstruction_loss(I_k, warp_image(I_k1, d, T, K), loss.ssim)
        pred = MotionParams(motion_target(ego, r)[:3], T.translation / r.s)
        return l_ir, transform_supervision_loss(pred, ego, r)

    ir0, tm0 = at(1.0)
    ir1, tm1 = at(c)
    return ProbeReport(c, ir0, ir1, tm0, tm1)
