"""Rigid motion, back-projection, reprojection, inverse warping and LIDAR fusion.

Pixel (row r, col c) sits at continuous image coordinates (u=c, v=r).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import (
    CameraIntrinsics,
    DepthMap,
    ImageBuffer,
    MotionParams,
    PointCloud,
    Rigid3,
    SparseDepth,
)

_SMALL_ANGLE = 1e-4
# log map switches to the symmetric-part branch this close to pi
_NEAR_PI = 1e-6
_MIN_Z = 1e-12


def skew(w) -> np.ndarray:
    x, y, z = np.asarray(w, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def rotation_exp(w) -> np.ndarray:
    """Rodrigues' formula: exp of the skew matrix of axis-angle ``w``."""
    w = np.asarray(w, dtype=np.float64)
    theta2 = float(w @ w)
    theta = np.sqrt(theta2)
    if theta < _SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    k = skew(w)
    return np.eye(3) + a * k + b * (k @ k)


def rotation_log(R) -> np.ndarray:
    """Axis-angle with angle in [0, pi] for rotation matrix ``R``."""
    R = np.asarray(R, dtype=np.float64)
    cos_t = 0.5 * (np.trace(R) - 1.0)
    sv = 0.5 * vee(R - R.T)  # sin(theta) * axis
    sin_t = float(np.linalg.norm(sv))
    theta = float(np.arctan2(sin_t, cos_t))
    if theta < _SMALL_ANGLE:
        return sv * (1.0 + theta * theta / 6.0)
    if theta > np.pi - _NEAR_PI:
        sym = 0.5 * (R + R.T) - cos_t * np.eye(3)
        outer = sym / (1.0 - cos_t)  # axis axis^T
        j = int(np.argmax(np.diag(outer)))
        axis = outer[:, j] / np.sqrt(outer[j, j])
        if axis @ sv < 0:
            axis = -axis
        return theta * axis
    return (theta / sin_t) * sv


def left_jacobian(w) -> np.ndarray:
    """J with exp(w + e) ~= exp(J e) exp(w) to first order in e."""
    w = np.asarray(w, dtype=np.float64)
    theta2 = float(w @ w)
    theta = np.sqrt(theta2)
    if theta < _SMALL_ANGLE:
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
        c = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
    else:
        b = (1.0 - np.cos(theta)) / theta2
        c = (theta - np.sin(theta)) / (theta2 * theta)
    k = skew(w)
    return np.eye(3) + b * k + c * (k @ k)


def motion_to_rigid(m: MotionParams) -> Rigid3:
    return Rigid3(rotation_exp(m.axis_angle), m.translation)


def rigid_to_motion(T: Rigid3) -> MotionParams:
    return MotionParams(rotation_log(T.rotation), T.translation)


def compose(A: Rigid3, B: Rigid3) -> Rigid3:
    """Apply ``B`` first, then ``A``."""
    return Rigid3(A.rotation @ B.rotation, A.rotation @ B.translation + A.translation)


def invert(T: Rigid3) -> Rigid3:
    Rt = T.rotation.T
    return Rigid3(Rt, -Rt @ T.translation)


def pixel_rays(height: int, width: int, K: CameraIntrinsics) -> np.ndarray:
    """(H, W, 3) rays with unit z through every pixel center."""
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([(cols - K.cx) / K.fx, (rows - K.cy) / K.fy, np.ones_like(rows)], axis=-1)


def back_project(depth: DepthMap | SparseDepth, K: CameraIntrinsics) -> PointCloud:
    """Camera-frame points of the valid pixels, in row-major scan order."""
    if isinstance(depth, SparseDepth):
        rows, cols, z = depth.rows, depth.cols, depth.depth
    else:
        rows, cols = np.nonzero(depth.valid)
        z = depth.depth[rows, cols]
    pts = np.stack([z * (cols - K.cx) / K.fx, z * (rows - K.cy) / K.fy, z], axis=1)
    return PointCloud(pts)


def transform_points(T: Rigid3, pc: PointCloud) -> PointCloud:
    return PointCloud(pc.points @ T.rotation.T + T.translation)


def _project_arrays(points: np.ndarray, K: CameraIntrinsics, height: int, width: int):
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    front = z > 0
    x, y, z = x[front], y[front], z[front]
    u = K.fx * x / z + K.cx
    v = K.fy * y / z + K.cy
    col = np.floor(u + 0.5)
    row = np.floor(v + 0.5)
    keep = (col >= 0) & (col < width) & (row >= 0) & (row < height)
    return row[keep].astype(np.int64), col[keep].astype(np.int64), z[keep]


def _sparse_from_zbuffer(rows, cols, z, height, width) -> SparseDepth:
    grid = kernels.zbuffer(rows, cols, z, height, width)
    r, c = np.nonzero(np.isfinite(grid))
    return SparseDepth(height, width, r, c, grid[r, c])


def project_points(pc: PointCloud, K: CameraIntrinsics, height: int, width: int) -> SparseDepth:
    """Nearest-pixel projection; the smallest depth wins each pixel."""
    rows, cols, z = _project_arrays(pc.points, K, height, width)
    return _sparse_from_zbuffer(rows, cols, z, height, width)


def fuse_sparse_frames(
    frames: list[tuple[SparseDepth, Rigid3]],
    K: CameraIntrinsics,
    shape: tuple[int, int] | None = None,
) -> SparseDepth:
    """Merge sparse depth frames into the reference camera.

    Each pose maps that frame's camera coordinates into the reference camera.
    """
    if not frames:
        h, w = shape if shape is not None else (0, 0)
        return SparseDepth(h, w)
    h, w = shape if shape is not None else frames[0][0].shape
    for sd, _ in frames:
        if sd.shape != (h, w):
            raise ValueError(f"frame shape {sd.shape} != reference shape {(h, w)}")
    all_r, all_c, all_z = [], [], []
    for sd, T in frames:
        pts = transform_points(T, back_project(sd, K)).points
        r, c, z = _project_arrays(pts, K, h, w)
        all_r.append(r)
        all_c.append(c)
        all_z.append(z)
    return _sparse_from_zbuffer(np.concatenate(all_r), np.concatenate(all_c), np.concatenate(all_z), h, w)


@dataclass(frozen=True)
class WarpResult:
    """Source image resampled into the target frame; masked-off pixels are 0."""

    warped: ImageBuffer
    mask: np.ndarray


@dataclass
class WarpJacobians:
    """Per-pixel derivatives of the warped intensities (flat over valid pixels)."""

    index: np.ndarray  # flat pixel indices (row * W + col) that were projected
    inside: np.ndarray  # which of those landed in bounds with z > 0
    d_depth: np.ndarray  # (N, C)
    d_rotation: np.ndarray | None  # (N, C, 3), w.r.t. axis-angle
    d_translation: np.ndarray | None  # (N, C, 3)


def warp_arrays(
    src: np.ndarray,
    depth: np.ndarray,
    valid: np.ndarray,
    rotation: np.ndarray,
    translation: np.ndarray,
    K: CameraIntrinsics,
    axis_angle: np.ndarray | None = None,
    jacobians: bool = False,
):
    """Array-level inverse warp used by :func:`warp_image` and the loss pipeline.

    Returns ``(warped (H, W, C), mask (H, W), WarpJacobians | None)``. When
    ``axis_angle`` is given the rotation derivative is taken w.r.t. it.
    """
    h, w, c = src.shape
    idx = np.flatnonzero(valid)
    rows, cols = np.divmod(idx, w)
    rays = np.stack([(cols - K.cx) / K.fx, (rows - K.cy) / K.fy, np.ones(len(idx))], axis=1)
    z0 = depth.ravel()[idx]
    rp = (rays * z0[:, None]) @ rotation.T
    q = rp + translation
    qz = q[:, 2]
    front = qz > _MIN_Z
    safe_z = np.where(front, qz, 1.0)
    u = np.where(front, K.fx * q[:, 0] / safe_z + K.cx, -np.inf)
    v = np.where(front, K.fy * q[:, 1] / safe_z + K.cy, -np.inf)
    vals, du, dv, inside = kernels.bilinear_sample(src, u, v)
    inside &= front

    warped = np.zeros((h * w, c))
    mask = np.zeros(h * w, dtype=bool)
    warped[idx[inside]] = vals[inside]
    mask[idx[inside]] = True
    warped = warped.reshape(h, w, c)
    mask = mask.reshape(h, w)
    if not jacobians:
        return warped, mask, None

    inv_z = 1.0 / safe_z
    # d(u, v)/dq, each (N, 3)
    du_dq = np.stack([K.fx * inv_z, np.zeros_like(inv_z), -K.fx * q[:, 0] * inv_z**2], axis=1)
    dv_dq = np.stack([np.zeros_like(inv_z), K.fy * inv_z, -K.fy * q[:, 1] * inv_z**2], axis=1)
    dI_dq = du[:, :, None] * du_dq[:, None, :] + dv[:, :, None] * dv_dq[:, None, :]  # (N, C, 3)
    dI_dq[~inside] = 0.0
    dq_ddepth = rays @ rotation.T
    d_depth = np.einsum("nck,nk->nc", dI_dq, dq_ddepth)
    d_rot = None
    if axis_angle is not None:
        jl = left_jacobian(axis_angle)
        # d(R p)/dw = -[R p]x J
        cross = np.zeros((len(idx), 3, 3))
        cross[:, 0, 1], cross[:, 0, 2] = -rp[:, 2], rp[:, 1]
        cross[:, 1, 0], cross[:, 1, 2] = rp[:, 2], -rp[:, 0]
        cross[:, 2, 0], cross[:, 2, 1] = -rp[:, 1], rp[:, 0]
        dq_dw = -cross @ jl
        d_rot = np.einsum("nck,nkj->ncj", dI_dq, dq_dw)
    return warped, mask, WarpJacobians(idx, inside, d_depth, d_rot, dI_dq)


def warp_image(src: ImageBuffer, depth_k: DepthMap, T_k_to_src: Rigid3, K: CameraIntrinsics) -> WarpResult:
    """Resample ``src`` into frame k using frame-k depth and the k -> src motion."""
    if src.shape != depth_k.shape:
        raise ValueError(f"image shape {src.shape} != depth shape {depth_k.shape}")
    warped, mask, _ = warp_arrays(
        src.data, depth_k.depth, depth_k.valid, T_k_to_src.rotation, T_k_to_src.translation, K
    )
    return WarpResult(ImageBuffer(np.clip(warped, 0.0, 1.0)), mask)
