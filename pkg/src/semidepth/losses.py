"""Photometric, smoothness, motion and dense-depth losses, their normalized total,
and analytic gradients through disparity, warping and motion.

Units: the optimizer works in *scaled* units, depth/s and translation/s, where
depth = 1 / (a x + b). The warp is unchanged by this common rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from . import kernels
from .core import (
    CameraIntrinsics,
    DepthMap,
    DepthRange,
    DisparityMap,
    ErrorMap,
    ImageBuffer,
    MotionParams,
    Rigid3,
)
from .geometry import rotation_exp, rotation_log, warp_arrays, WarpResult

TERMS = ("ir", "ds", "tm", "dd")
SmoothnessMode = Literal["edge_aware", "literal"]


class EmptyMaskError(ValueError):
    """A masked mean was requested over zero pixels."""


@dataclass(frozen=True)
class SsimConfig:
    window: int = 3
    c1: float = 1e-4
    c2: float = 9e-4
    alpha: float = 0.85

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"SSIM window must be odd and >= 3, got {self.window}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("SSIM stabilizers must be positive")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0,1], got {self.alpha}")


@dataclass(frozen=True)
class LossBreakdown:
    l_ir: float = 0.0
    l_ds: float = 0.0
    l_tm: float = 0.0
    l_dd: float = 0.0
    per_pixel_ir: np.ndarray | None = field(default=None, repr=False, compare=False)
    n: int = 0

    def __post_init__(self):
        for name in TERMS:
            v = getattr(self, f"l_{name}")
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"loss term l_{name} must be finite and >= 0, got {v}")

    def terms(self) -> tuple[float, float, float, float]:
        return (self.l_ir, self.l_ds, self.l_tm, self.l_dd)


@dataclass(frozen=True)
class NormalizerState:
    """Detached running magnitudes for the four terms (None = not yet observed).

    ``mode="ema"`` keeps exponential moving averages with decay ``beta``;
    ``mode="batch"`` divides each term by its own current magnitude.
    """

    magnitudes: tuple[float | None, ...] = (None, None, None, None)
    beta: float = 0.99
    mode: Literal["ema", "batch"] = "ema"

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0,1), got {self.beta}")
        if self.mode not in ("ema", "batch"):
            raise ValueError(f"unknown normalizer mode {self.mode!r}")


def normalizer_weights(b: LossBreakdown, state: NormalizerState) -> np.ndarray:
    """Multipliers 1/|L_k| that :func:`total_loss` applies to each term."""
    w = np.zeros(4)
    for k, (term, m) in enumerate(zip(b.terms(), state.magnitudes)):
        if term == 0:
            continue
        if state.mode == "batch" or m is None:
            w[k] = 1.0 / abs(term)
        else:
            w[k] = 1.0 / m
    return w


def total_loss(b: LossBreakdown, state: NormalizerState) -> tuple[float, NormalizerState]:
    """Sum of terms, each divided by its (constant) running magnitude."""
    w = normalizer_weights(b, state)
    total = float(np.dot(w, b.terms()))
    mags = list(state.magnitudes)
    for k, term in enumerate(b.terms()):
        if term == 0:
            continue
        if state.mode == "batch" or mags[k] is None:
            mags[k] = abs(term)
        else:
            mags[k] = state.beta * mags[k] + (1 - state.beta) * abs(term)
    return total, replace(state, magnitudes=tuple(mags))


# --- SSIM -------------------------------------------------------------------


def _ssim_stats(a, b, m, cfg: SsimConfig):
    r = cfg.window // 2
    mw = m.astype(np.float64)[:, :, None]
    n = kernels.box_sum(mw, r)
    inv_n = np.divide(1.0, n, out=np.zeros_like(n), where=n > 0)
    mx = kernels.box_sum(mw * a, r) * inv_n
    my = kernels.box_sum(mw * b, r) * inv_n
    sxx = kernels.box_sum(mw * a * a, r) * inv_n - mx * mx
    syy = kernels.box_sum(mw * b * b, r) * inv_n - my * my
    sxy = kernels.box_sum(mw * a * b, r) * inv_n - mx * my
    a1 = 2 * mx * my + cfg.c1
    a2 = 2 * sxy + cfg.c2
    b1 = mx * mx + my * my + cfg.c1
    b2 = sxx + syy + cfg.c2
    s = a1 * a2 / (b1 * b2)
    return s, (mx, my, a1, a2, b1, b2, inv_n)


def ssim_map(a: ImageBuffer, b: ImageBuffer, cfg: SsimConfig = SsimConfig(), mask=None) -> np.ndarray:
    """Channel-averaged SSIM per pixel using box windows.

    Windows are truncated at the image border and, when ``mask`` is given,
    restricted to masked-in pixels. Pixels outside the mask get 0.
    """
    if a.shape != b.shape or a.channels != b.channels:
        raise ValueError(f"image dimensions differ: {a.data.shape} vs {b.data.shape}")
    m = np.ones(a.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    s, _ = _ssim_stats(a.data, b.data, m, cfg)
    return np.where(m, s.mean(axis=2), 0.0)


def _ssim_backward(a, b, m, s, cache, upstream, radius):
    """d(sum_pc upstream_pc * S_pc)/d b, with S and cache from :func:`_ssim_stats`.

    dS_p/db_q = w_pq (k0_p + k1_p a_q + k2_p b_q) with w_pq = m_q / n_p inside
    the window, so the adjoint is three box sums.
    """
    mx, my, a1, a2, b1, b2, inv_n = cache
    den = b1 * b2
    k0 = 2 * mx * (a2 - a1) / den - 2 * s * my / b1 + 2 * s * my / b2
    k1 = 2 * a1 / den
    k2 = -2 * s / b2
    g = upstream * inv_n
    mw = m.astype(np.float64)[:, :, None]
    return mw * (kernels.box_sum(g * k0, radius) + a * kernels.box_sum(g * k1, radius)
                 + b * kernels.box_sum(g * k2, radius))


# --- individual terms on arrays --------------------------------------------


def _ir_forward(img, warped, mask, cfg: SsimConfig, want_grad: bool):
    n = int(mask.sum())
    if n == 0:
        raise EmptyMaskError("image reconstruction loss over an empty warp mask")
    c = img.shape[2]
    s, cache = _ssim_stats(img, warped, mask, cfg)
    diff = warped - img
    per_pixel = cfg.alpha * (1 - s.mean(axis=2)) / 2 + (1 - cfg.alpha) * np.abs(diff).mean(axis=2)
    per_pixel = np.where(mask, per_pixel, 0.0)
    value = float(per_pixel.sum() / n)
    if not want_grad:
        return value, per_pixel, None
    mw = mask.astype(np.float64)[:, :, None]
    upstream = np.broadcast_to(-cfg.alpha / (2 * c * n) * mw, s.shape)
    grad = _ssim_backward(img, warped, mask, s, cache, upstream, cfg.window // 2)
    grad += (1 - cfg.alpha) / (c * n) * np.sign(diff) * mw
    return value, per_pixel, grad


def _edge_weights(img):
    gx = np.abs(img[:, 1:] - img[:, :-1]).mean(axis=2)
    gy = np.abs(img[1:, :] - img[:-1, :]).mean(axis=2)
    return np.exp(-gx), np.exp(-gy)


def _ds_forward(x, img, mode: SmoothnessMode, want_grad: bool):
    dx = x[:, 1:] - x[:, :-1]
    dy = x[1:, :] - x[:-1, :]
    if mode == "edge_aware":
        wx, wy = _edge_weights(img)
        tx, ty = np.abs(dx) * wx, np.abs(dy) * wy
        gxx, gyy = np.sign(dx) * wx, np.sign(dy) * wy
    elif mode == "literal":
        ex, ey = np.exp(-np.abs(dx)), np.exp(-np.abs(dy))
        tx, ty = np.abs(dx) * ex, np.abs(dy) * ey
        gxx = np.sign(dx) * ex * (1 - np.abs(dx))
        gyy = np.sign(dy) * ey * (1 - np.abs(dy))
    else:
        raise ValueError(f"unknown smoothness mode {mode!r}")
    value = (tx.mean() if tx.size else 0.0) + (ty.mean() if ty.size else 0.0)
    if not want_grad:
        return float(value), None
    grad = np.zeros_like(x)
    if tx.size:
        gxx = gxx / tx.size
        grad[:, 1:] += gxx
        grad[:, :-1] -= gxx
    if ty.size:
        gyy = gyy / ty.size
        grad[1:, :] += gyy
        grad[:-1, :] -= gyy
    return float(value), grad


def motion_target(gt: Rigid3, r: DepthRange) -> np.ndarray:
    """Six-vector [axis-angle, t / s] that the predicted motion is pulled toward."""
    return np.concatenate([rotation_log(gt.rotation), gt.translation / r.s])


def _dd_forward(pred, pred_valid, gt, gt_valid, err, r: DepthRange, want_grad: bool):
    sel = pred_valid & gt_valid
    n = int(sel.sum())
    if n == 0:
        raise EmptyMaskError("dense depth loss over zero co-valid pixels")
    target = np.where(sel, gt / r.s, 1.0)
    weight = np.where(sel, (1 - err) / target, 0.0)
    diff = np.where(sel, pred - target, 0.0)
    per_pixel = weight * diff * diff
    value = float(per_pixel.sum() / n)
    grad = 2 * weight * diff / n if want_grad else None
    return value, per_pixel, grad


# --- public per-term API ----------------------------------------------------


def image_reconstruction_loss(I: ImageBuffer, I_warp: WarpResult, cfg: SsimConfig = SsimConfig()):
    """Masked mean of alpha (1 - SSIM)/2 + (1 - alpha) |I - I~|; returns (value, per-pixel map)."""
    if I.data.shape != I_warp.warped.data.shape:
        raise ValueError(f"image dimensions differ: {I.data.shape} vs {I_warp.warped.data.shape}")
    value, per_pixel, _ = _ir_forward(I.data, I_warp.warped.data, np.asarray(I_warp.mask, bool), cfg, False)
    return value, per_pixel


def smoothness_loss(x: DisparityMap, I: ImageBuffer, mode: SmoothnessMode = "edge_aware") -> float:
    if x.shape != I.shape:
        raise ValueError(f"disparity shape {x.shape} != image shape {I.shape}")
    return _ds_forward(x.x, I.data, mode, False)[0]


def transform_supervision_loss(pred: MotionParams, gt: Rigid3, r: DepthRange = DepthRange()) -> float:
    diff = pred.vector - motion_target(gt, r)
    return float(diff @ diff)


def dense_depth_loss(pred: DepthMap, dense_gt: DepthMap, err: ErrorMap | None, r: DepthRange = DepthRange()):
    """Distance-weighted squared error against ``dense_gt / s``.

    ``pred`` is in scaled units (metric depth / s). Returns (value, per-pixel map).
    """
    if pred.shape != dense_gt.shape or (err is not None and err.shape != pred.shape):
        raise ValueError("prediction, dense depth and error map must share dimensions")
    e = np.zeros(pred.shape) if err is None else err.err
    value, per_pixel, _ = _dd_forward(pred.depth, pred.valid, dense_gt.depth, dense_gt.valid, e, r, False)
    return value, per_pixel


# --- combined evaluation with gradients -------------------------------------


@dataclass(frozen=True)
class LossInputs:
    """Everything the objective needs besides the latent field and the motion."""

    image_k: ImageBuffer
    image_k1: ImageBuffer
    K: CameraIntrinsics
    ego: Rigid3  # metric motion from frame k to frame k+1
    depth_range: DepthRange = DepthRange()
    dense_gt: DepthMap | None = None
    err: ErrorMap | None = None

    def __post_init__(self):
        if self.image_k.data.shape != self.image_k1.data.shape:
            raise ValueError("frame k and frame k+1 differ in shape")
        for other in (self.dense_gt, self.err):
            if other is not None and other.shape != self.image_k.shape:
                raise ValueError("supervision maps must match the image shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.image_k.shape


@dataclass(frozen=True)
class LossConfig:
    terms: frozenset = frozenset(TERMS)
    ssim: SsimConfig = SsimConfig()
    smoothness_mode: SmoothnessMode = "edge_aware"

    def __post_init__(self):
        terms = frozenset(self.terms)
        unknown = terms - set(TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms {sorted(unknown)}")
        if not terms:
            raise ValueError("at least one loss term must be enabled")
        object.__setattr__(self, "terms", terms)


@dataclass
class Evaluation:
    breakdown: LossBreakdown
    weights: np.ndarray
    total: float
    mask: np.ndarray | None
    grad_latent: np.ndarray | None = None
    grad_motion: np.ndarray | None = None


def sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=np.float64)))


def evaluate(
    inputs: LossInputs,
    latent: np.ndarray,
    motion: np.ndarray,
    cfg: LossConfig = LossConfig(),
    weights=None,
    gradients: bool = True,
) -> Evaluation:
    """Enabled loss terms for latent field ``latent`` and scaled motion 6-vector ``motion``.

    ``weights`` multiplies the raw terms (default 1 each); gradients are of
    ``sum_k weights[k] * L_k`` w.r.t. ``latent`` and ``motion``.
    """
    r = inputs.depth_range
    latent = np.asarray(latent, dtype=np.float64)
    motion = np.asarray(motion, dtype=np.float64)
    w = np.ones(4) if weights is None else np.asarray(weights, dtype=np.float64)
    x = sigmoid(latent)
    depth = 1.0 / (r.a * x + r.b)  # scaled units
    terms = dict.fromkeys(TERMS, 0.0)
    g_depth = np.zeros_like(depth)
    g_x = np.zeros_like(depth)
    g_motion = np.zeros(6)
    per_pixel_ir = None
    mask = None
    n_ir = 0

    if "ir" in cfg.terms:
        R = rotation_exp(motion[:3])
        warped, mask, jac = warp_arrays(
            inputs.image_k1.data, depth, np.ones(depth.shape, dtype=bool), R, motion[3:], inputs.K,
            axis_angle=motion[:3], jacobians=gradients,
        )
        terms["ir"], per_pixel_ir, g_img = _ir_forward(inputs.image_k.data, warped, mask, cfg.ssim, gradients)
        n_ir = int(mask.sum())
        if gradients:
            gi = g_img.reshape(-1, g_img.shape[2])[jac.index] * w[0]
            g_depth.ravel()[jac.index] += np.einsum("nc,nc->n", gi, jac.d_depth)
            g_motion[:3] += np.einsum("nc,ncj->j", gi, jac.d_rotation)
            g_motion[3:] += np.einsum("nc,ncj->j", gi, jac.d_translation)

    if "ds" in cfg.terms:
        terms["ds"], gx = _ds_forward(x, inputs.image_k.data, cfg.smoothness_mode, gradients)
        if gradients:
            g_x += w[1] * gx

    if "tm" in cfg.terms:
        diff = motion - motion_target(inputs.ego, r)
        terms["tm"] = float(diff @ diff)
        if gradients:
            g_motion += w[2] * 2 * diff

    if "dd" in cfg.terms:
        if inputs.dense_gt is None:
            raise ValueError("dense depth term enabled without dense supervision")
        err = np.zeros(depth.shape) if inputs.err is None else inputs.err.err
        terms["dd"], _, gd = _dd_forward(
            depth, np.ones(depth.shape, dtype=bool), inputs.dense_gt.depth, inputs.dense_gt.valid, err, r, gradients
        )
        if gradients:
            g_depth += w[3] * gd

    b = LossBreakdown(terms["ir"], terms["ds"], terms["tm"], terms["dd"], per_pixel_ir, n_ir)
    total = float(np.dot(w, b.terms()))
    ev = Evaluation(b, w, total, mask)
    if gradients:
        g_x += g_depth * (-r.a * depth * depth)
        ev.grad_latent = g_x * x * (1 - x)
        ev.grad_motion = g_motion
    return ev


def loss_gradients(
    inputs: LossInputs,
    latent: np.ndarray,
    motion: MotionParams,
    cfg: LossConfig = LossConfig(),
    state: NormalizerState | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the normalized total w.r.t. the latent field and the motion.

    Normalizers come from ``state`` exactly as :func:`total_loss` would apply
    them; without a state the raw sum of enabled terms is differentiated.
    """
    weights = None
    if state is not None:
        raw = evaluate(inputs, latent, motion.vector, cfg, gradients=False)
        weights = normalizer_weights(raw.breakdown, state)
    ev = evaluate(inputs, latent, motion.vector, cfg, weights=weights)
    return ev.grad_latent, ev.grad_motion
