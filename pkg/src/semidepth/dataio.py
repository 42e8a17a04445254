"""File formats: images, 16-bit depth and error PNGs, pose text files, manifests.

Depth PNG: uint16, meters * 256, raw 0 marks an invalid pixel.
Error PNG: uint16, err * 65535.
Pose file: one record per line, 6 values (axis-angle rad, translation m) or
12 values (row-major 3x4 [R|t]); ``#`` starts a comment.
Manifest: one sample per line,
``img_k img_k1 fx fy cx cy pose_file pose_index [sparse_gt] [dense_depth] [error_map]``
with ``-`` for an absent optional field. Paths are relative to the manifest.
The pose record maps frame-k camera coordinates into frame k+1.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .core import CameraIntrinsics, DepthMap, ErrorMap, ImageBuffer, MotionParams, Rigid3, SparseDepth
from .geometry import motion_to_rigid, rigid_to_motion

DEPTH_SCALE = 256.0
ERROR_SCALE = 65535.0
POSE_TOL = 1e-6


class FormatError(ValueError):
    """A file does not follow the expected format."""


def _read_png16(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"{path}: not a readable image")
    if raw.dtype != np.uint16:
        raise FormatError(f"{path}: expected 16-bit PNG, got {raw.dtype}")
    if raw.ndim != 2:
        raise FormatError(f"{path}: expected single channel, got {raw.shape[2]} channels")
    return raw


def _write_png16(path, raw: np.ndarray) -> None:
    if not cv2.imwrite(str(path), raw.astype(np.uint16)):
        raise OSError(f"could not write {path}")


def read_depth_png16(path) -> DepthMap:
    raw = _read_png16(path)
    return DepthMap(raw.astype(np.float64) / DEPTH_SCALE, raw > 0)


def write_depth_png16(path, depth: DepthMap | SparseDepth) -> None:
    if isinstance(depth, SparseDepth):
        depth = depth.to_depth_map()
    raw = np.where(depth.valid, np.floor(depth.depth * DEPTH_SCALE + 0.5), 0.0)
    if raw.max(initial=0) > 65535:
        raise FormatError(f"depth {depth.depth[depth.valid].max():g} m overflows the 16-bit encoding")
    tiny = depth.valid & (raw == 0)
    if tiny.any():
        raise FormatError(f"valid depth below 1/512 m would be stored as invalid at {tuple(np.argwhere(tiny)[0])}")
    _write_png16(path, raw)


def read_error_map(path) -> ErrorMap:
    return ErrorMap(_read_png16(path).astype(np.float64) / ERROR_SCALE)


def write_error_map(path, err: ErrorMap) -> None:
    _write_png16(path, np.floor(err.err * ERROR_SCALE + 0.5))


def read_image(path) -> ImageBuffer:
    """8- or 16-bit grayscale/RGB PNG normalized to [0,1]; colour returned as RGB."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"{path}: not a readable image")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise FormatError(f"{path}: unsupported pixel type {raw.dtype}")
    if raw.ndim == 3:
        if raw.shape[2] == 4:
            raw = raw[:, :, :3]
        raw = raw[:, :, ::-1]
    return ImageBuffer(raw.astype(np.float64) / scale)


def write_image(path, img: ImageBuffer | np.ndarray, bits: int = 16) -> None:
    data = img.data if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    if data.ndim == 3:
        data = data[:, :, ::-1]
    top = 65535.0 if bits == 16 else 255.0
    raw = np.floor(np.clip(data, 0, 1) * top + 0.5).astype(np.uint16 if bits == 16 else np.uint8)
    if not cv2.imwrite(str(path), raw):
        raise OSError(f"could not write {path}")


def write_mask(path, mask: np.ndarray) -> None:
    if not cv2.imwrite(str(path), np.asarray(mask, dtype=np.uint8) * 255):
        raise OSError(f"could not write {path}")


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(R)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def parse_pose_line(values: list[float], where: str = "") -> Rigid3:
    if len(values) == 6:
        return motion_to_rigid(MotionParams.from_vector(values))
    if len(values) == 12:
        m = np.array(values).reshape(3, 4)
        R = m[:, :3]
        ortho = np.abs(R.T @ R - np.eye(3)).max()
        det = np.linalg.det(R)
        if ortho > POSE_TOL or abs(det - 1) > POSE_TOL:
            raise FormatError(f"{where}rotation is not orthonormal (|R^T R - I| = {ortho:.3g}, det = {det:.6g})")
        return Rigid3(orthonormalize(R), m[:, 3])
    raise FormatError(f"{where}expected 6 or 12 values, got {len(values)}")


def read_pose_file(path) -> list[Rigid3]:
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            where = f"{path}:{lineno}: "
            try:
                values = [float(v) for v in line.split()]
            except ValueError:
                raise FormatError(f"{where}non-numeric field") from None
            poses.append(parse_pose_line(values, where))
    return poses


def write_pose_file(path, poses: list[Rigid3], fmt: str = "6") -> None:
    """Write poses as 6-value axis-angle records (default) or 12-value [R|t] rows."""
    with open(path, "w") as fh:
        for T in poses:
            if fmt == "6":
                vals = rigid_to_motion(T).vector
            elif fmt == "12":
                vals = np.hstack([T.rotation, T.translation[:, None]]).ravel()
            else:
                raise ValueError(f"pose format must be '6' or '12', got {fmt!r}")
            fh.write(" ".join(repr(float(v)) for v in vals) + "\n")


@dataclass(frozen=True)
class SamplePair:
    image_k: Path
    image_k1: Path
    intrinsics: CameraIntrinsics
    pose_file: Path
    pose_index: int
    sparse_gt: Path | None = None
    dense_depth: Path | None = None
    error_map: Path | None = None
    line: int = 0

    def ego(self) -> Rigid3:
        poses = read_pose_file(self.pose_file)
        if not 0 <= self.pose_index < len(poses):
            raise FormatError(f"{self.pose_file}: pose index {self.pose_index} out of range ({len(poses)} records)")
        return poses[self.pose_index]

    def load(self) -> dict:
        """Read every referenced file and check that dimensions agree."""
        out = {
            "image_k": read_image(self.image_k),
            "image_k1": read_image(self.image_k1),
            "K": self.intrinsics,
            "ego": self.ego(),
            "sparse_gt": read_depth_png16(self.sparse_gt) if self.sparse_gt else None,
            "dense_depth": read_depth_png16(self.dense_depth) if self.dense_depth else None,
            "error_map": read_error_map(self.error_map) if self.error_map else None,
        }
        shape = out["image_k"].data.shape
        if out["image_k1"].data.shape != shape:
            raise FormatError(f"manifest line {self.line}: frame shapes differ")
        for key in ("sparse_gt", "dense_depth", "error_map"):
            if out[key] is not None and out[key].shape != shape[:2]:
                raise FormatError(f"manifest line {self.line}: {key} shape {out[key].shape} != image {shape[:2]}")
        return out


_REQUIRED = 8


def read_manifest(path) -> list[SamplePair]:
    path = Path(path)
    base = path.parent
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            fields = shlex.split(body)
            if len(fields) < _REQUIRED:
                raise FormatError(f"{path}:{lineno}: expected at least {_REQUIRED} fields, got {len(fields)}")
            if len(fields) > _REQUIRED + 3:
                raise FormatError(f"{path}:{lineno}: too many fields ({len(fields)})")
            try:
                fx, fy, cx, cy = (float(v) for v in fields[2:6])
                pose_index = int(fields[7])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: intrinsics and pose index must be numeric") from None

            def resolve(name, required):
                if name == "-":
                    if required:
                        raise FormatError(f"{path}:{lineno}: required path missing")
                    return None
                p = base / name
                if not p.is_file():
                    raise FormatError(f"{path}:{lineno}: no such file {p}")
                return p

            optional = fields[_REQUIRED:] + ["-"] * (_REQUIRED + 3 - len(fields))
            samples.append(
                SamplePair(
                    image_k=resolve(fields[0], True),
                    image_k1=resolve(fields[1], True),
                    intrinsics=CameraIntrinsics(fx, fy, cx, cy),
                    pose_file=resolve(fields[6], True),
                    pose_index=pose_index,
                    sparse_gt=resolve(optional[0], False),
                    dense_depth=resolve(optional[1], False),
                    error_map=resolve(optional[2], False),
                    line=lineno,
                )
            )
    return samples


def write_manifest(path, samples: list[SamplePair]) -> None:
    """Write samples with paths relative to the manifest directory."""
    base = Path(path).parent.resolve()

    def rel(p):
        if p is None:
            return "-"
        return str(Path(p).resolve().relative_to(base)) if Path(p).resolve().is_relative_to(base) else str(p)

    with open(path, "w") as fh:
        for s in samples:
            K = s.intrinsics
            fields = [rel(s.image_k), rel(s.image_k1), repr(K.fx), repr(K.fy), repr(K.cx), repr(K.cy),
                      rel(s.pose_file), str(s.pose_index), rel(s.sparse_gt), rel(s.dense_depth), rel(s.error_map)]
            fh.write(" ".join(shlex.quote(f) for f in fields) + "\n")
