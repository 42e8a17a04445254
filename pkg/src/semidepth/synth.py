"""Synthetic textured planes with exact depth and camera motion.

Frame k is the world frame. The plane is ``n . p = offset`` in frame-k
coordinates, textured with a band-limited sum of sinusoids in the plane's
(x, y) coordinates so that images can be rendered at any pixel exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraIntrinsics, DepthMap, DepthRange, ErrorMap, ImageBuffer, MotionParams, Rigid3, SparseDepth
from .geometry import invert, motion_to_rigid, pixel_rays


@dataclass(frozen=True)
class Texture:
    """Per channel: 0.5 + sum_k amp_k sin(fx_k X + fy_k Y + phase_k)."""

    amps: np.ndarray  # (C, K)
    freqs: np.ndarray  # (C, K, 2) rad/m
    phases: np.ndarray  # (C, K)

    @classmethod
    def random(cls, rng, channels=3, components=6, min_wavelength=1.0, max_wavelength=3.0):
        wl = rng.uniform(min_wavelength, max_wavelength, (channels, components))
        ang = rng.uniform(0, np.pi, (channels, components))
        freqs = np.stack([np.cos(ang), np.sin(ang)], axis=-1) * (2 * np.pi / wl)[..., None]
        amps = rng.uniform(0.5, 1.0, (channels, components))
        amps *= 0.38 / amps.sum(axis=1, keepdims=True)
        return cls(amps, freqs, rng.uniform(0, 2 * np.pi, (channels, components)))

    def __call__(self, X, Y) -> np.ndarray:
        arg = (X[..., None, None] * self.freqs[..., 0] + Y[..., None, None] * self.freqs[..., 1] + self.phases)
        return 0.5 + (self.amps * np.sin(arg)).sum(axis=-1)


@dataclass(frozen=True)
class Plane:
    normal: np.ndarray
    offset: float

    @classmethod
    def tilted(cls, depth: float, tilt_x: float = 0.0, tilt_y: float = 0.0) -> Plane:
        """Plane through (0, 0, depth) rotated by the given angles (radians) about x and y."""
        n = np.array([np.sin(tilt_y), -np.sin(tilt_x) * np.cos(tilt_y), np.cos(tilt_x) * np.cos(tilt_y)])
        return cls(n, float(n[2] * depth))

    def render(self, height, width, K, cam_to_world: Rigid3, texture: Texture):
        """(image (H, W, C), depth (H, W)) seen by a camera with the given pose."""
        rays = pixel_rays(height, width, K)
        dirs = rays @ cam_to_world.rotation.T
        center = cam_to_world.translation
        lam = (self.offset - self.normal @ center) / (dirs @ self.normal)
        pts = center + lam[..., None] * dirs
        img = np.clip(texture(pts[..., 0], pts[..., 1]), 0.0, 1.0)
        return img, lam


@dataclass(frozen=True)
class SynthScene:
    K: CameraIntrinsics
    image_k: ImageBuffer
    image_k1: ImageBuffer
    depth_k: DepthMap  # metric, exact
    ego: Rigid3  # frame k -> frame k+1
    depth_range: DepthRange
    plane: Plane
    texture: Texture

    @property
    def shape(self) -> tuple[int, int]:
        return self.image_k.shape

    def perturbed_depth(self, rng, amount: float = 0.2) -> DepthMap:
        """True depth times i.i.d. factors uniform in [1 - amount, 1 + amount]."""
        noise = rng.uniform(1 - amount, 1 + amount, self.shape)
        return DepthMap(self.depth_k.depth * noise)

    def error_map(self, value: float = 0.0) -> ErrorMap:
        return ErrorMap(np.full(self.shape, value))


def default_intrinsics(height: int, width: int, focal: float | None = None) -> CameraIntrinsics:
    f = focal if focal is not None else 0.95 * width
    return CameraIntrinsics(f, f, (width - 1) / 2, (height - 1) / 2)


def plane_scene(
    seed: int = 0,
    height: int = 48,
    width: int = 64,
    depth: float = 10.0,
    tilt: tuple[float, float] = (0.0, 0.0),
    motion: MotionParams | None = None,
    channels: int = 3,
    depth_range: DepthRange = DepthRange(),
    K: CameraIntrinsics | None = None,
) -> SynthScene:
    """Textured plane seen from two poses related by ``motion`` (metric)."""
    rng = np.random.default_rng(seed)
    K = K or default_intrinsics(height, width)
    if motion is None:
        motion = MotionParams([0.0, 0.01, 0.0], [0.5, 0.0, 0.15])
    ego = motion_to_rigid(motion)
    plane = Plane.tilted(depth, *tilt)
    texture = Texture.random(rng, channels=channels)
    img_k, d_k = plane.render(height, width, K, Rigid3(), texture)
    img_k1, _ = plane.render(height, width, K, invert(ego), texture)
    return SynthScene(K, ImageBuffer(img_k), ImageBuffer(img_k1), DepthMap(d_k), ego, depth_range, plane, texture)


def lidar_frames(
    scene_plane: Plane,
    height: int,
    width: int,
    K: CameraIntrinsics,
    poses: list[Rigid3],
    row_step: int = 6,
    keep: float = 0.9,
    seed: int = 0,
) -> list[tuple[SparseDepth, Rigid3]]:
    """Scan-line sparse depth for each camera pose (camera -> reference).

    Every ``row_step``-th row is sampled, each pixel kept with probability ``keep``.
    """
    rng = np.random.default_rng(seed)
    frames = []
    for pose in poses:
        rays = pixel_rays(height, width, K)
        dirs = rays @ pose.rotation.T
        lam = (scene_plane.offset - scene_plane.normal @ pose.translation) / (dirs @ scene_plane.normal)
        sel = np.zeros((height, width), dtype=bool)
        sel[::row_step] = True
        sel &= rng.random((height, width)) < keep
        sel &= np.isfinite(lam) & (lam > 0)
        rows, cols = np.nonzero(sel)
        frames.append((SparseDepth(height, width, rows, cols, lam[rows, cols]), pose))
    return frames
