"""Value types shared by every module.

All arrays are stored as read-only float64 (or bool) numpy arrays in C order,
so ``array[row, col, channel]`` is the row-major layout used everywhere.
Constructors check their invariants and raise :class:`InvariantError`;
:func:`validate` reports violations without raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

ORTHO_TOL = 1e-9


class InvariantError(ValueError):
    """Raised when a value type is constructed from data breaking its invariants."""

    def __init__(self, kind: str, violations: list[Violation]):
        self.kind = kind
        self.violations = violations
        text = "; ".join(str(v) for v in violations)
        super().__init__(f"invalid {kind}: {text}")


@dataclass(frozen=True)
class Violation:
    message: str
    pixels: tuple[tuple[int, int], ...] = ()

    def __str__(self) -> str:
        if not self.pixels:
            return self.message
        shown = ", ".join(f"({r},{c})" for r, c in self.pixels[:5])
        more = f" +{len(self.pixels) - 5} more" if len(self.pixels) > 5 else ""
        return f"{self.message} at {shown}{more}"


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def messages(self) -> list[str]:
        return [v.message for v in self.violations]


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True, order="C")
    out.setflags(write=False)
    return out


def _pixels(bad: np.ndarray) -> tuple[tuple[int, int], ...]:
    if bad.ndim == 1:
        return tuple((int(i), 0) for i in np.flatnonzero(bad))
    rows, cols = np.nonzero(bad)
    return tuple(zip(rows.tolist(), cols.tolist()))


# --- invariant checkers -----------------------------------------------------
# Each takes raw fields and returns a list of violations.


def _check_image(data) -> list[Violation]:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3 or data.shape[2] not in (1, 3):
        return [Violation(f"image must be HxW, HxWx1 or HxWx3, got shape {data.shape}")]
    out = []
    bad = ~np.isfinite(data).all(axis=2)
    if bad.any():
        out.append(Violation("non-finite intensity", _pixels(bad)))
    with np.errstate(invalid="ignore"):
        rng = ((data < 0) | (data > 1)).any(axis=2) & ~bad
    if rng.any():
        out.append(Violation("intensity out of [0,1]", _pixels(rng)))
    return out


def _check_depth(depth, valid) -> list[Violation]:
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if depth.ndim != 2:
        return [Violation(f"depth must be 2-D, got shape {depth.shape}")]
    if valid.shape != depth.shape:
        return [Violation(f"mask shape {valid.shape} != depth shape {depth.shape}")]
    out = []
    nonfinite = valid & ~np.isfinite(depth)
    if nonfinite.any():
        out.append(Violation("non-finite depth", _pixels(nonfinite)))
    with np.errstate(invalid="ignore"):
        nonpos = valid & np.isfinite(depth) & (depth <= 0)
    if nonpos.any():
        out.append(Violation("non-positive depth", _pixels(nonpos)))
    return out


def _check_disparity(x) -> list[Violation]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        return [Violation(f"disparity must be 2-D, got shape {x.shape}")]
    out = []
    bad = ~np.isfinite(x)
    if bad.any():
        out.append(Violation("non-finite disparity", _pixels(bad)))
    with np.errstate(invalid="ignore"):
        rng = ~bad & ((x < 0) | (x > 1))
    if rng.any():
        out.append(Violation("disparity out of [0,1]", _pixels(rng)))
    return out


def _check_error(err) -> list[Violation]:
    err = np.asarray(err, dtype=np.float64)
    if err.ndim != 2:
        return [Violation(f"error map must be 2-D, got shape {err.shape}")]
    with np.errstate(invalid="ignore"):
        bad = ~(np.isfinite(err) & (err >= 0) & (err <= 1))
    if bad.any():
        return [Violation("error probability out of [0,1]", _pixels(bad))]
    return []


def _check_range(d_min, d_max, s) -> list[Violation]:
    out = []
    if not (np.isfinite(d_min) and np.isfinite(d_max) and 0 < d_min < d_max):
        out.append(Violation(f"need 0 < d_min < d_max, got ({d_min}, {d_max})"))
    if not (np.isfinite(s) and s >= 1):
        out.append(Violation(f"scale must be >= 1, got {s}"))
    return out


def _check_intrinsics(fx, fy, cx, cy) -> list[Violation]:
    vals = np.array([fx, fy, cx, cy], dtype=np.float64)
    out = []
    if not np.isfinite(vals).all():
        out.append(Violation("non-finite intrinsics"))
    elif fx <= 0 or fy <= 0:
        out.append(Violation(f"focal lengths must be positive, got fx={fx}, fy={fy}"))
    return out


def _check_rigid(rotation, translation) -> list[Violation]:
    R = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)
    if R.shape != (3, 3) or t.shape != (3,):
        return [Violation(f"rotation must be 3x3 and translation 3, got {R.shape}, {t.shape}")]
    if not (np.isfinite(R).all() and np.isfinite(t).all()):
        return [Violation("non-finite rigid transform")]
    out = []
    ortho = np.abs(R.T @ R - np.eye(3)).max()
    if ortho > ORTHO_TOL:
        out.append(Violation(f"rotation not orthonormal (max |R^T R - I| = {ortho:.3g})"))
    det = np.linalg.det(R)
    if abs(det - 1.0) > ORTHO_TOL:
        out.append(Violation(f"rotation determinant {det:.12g} != 1"))
    return out


def _check_motion(axis_angle, translation) -> list[Violation]:
    w = np.asarray(axis_angle, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)
    if w.shape != (3,) or t.shape != (3,):
        return [Violation("axis_angle and translation must be 3-vectors")]
    if not (np.isfinite(w).all() and np.isfinite(t).all()):
        return [Violation("non-finite motion parameter")]
    return []


def _check_sparse(height, width, rows, cols, depth) -> list[Violation]:
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    depth = np.asarray(depth, dtype=np.float64)
    if not (rows.shape == cols.shape == depth.shape and rows.ndim == 1):
        return [Violation("rows, cols and depth must be equal-length 1-D arrays")]
    out = []
    inb = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    if not inb.all():
        bad = ~inb
        out.append(Violation("sample out of bounds",
                             tuple(zip(rows[bad].tolist(), cols[bad].tolist()))))
    with np.errstate(invalid="ignore"):
        nonpos = ~(np.isfinite(depth) & (depth > 0))
    if nonpos.any():
        out.append(Violation("non-positive depth",
                             tuple(zip(rows[nonpos].tolist(), cols[nonpos].tolist()))))
    if inb.all() and len(rows):
        flat = rows.astype(np.int64) * width + cols
        uniq, counts = np.unique(flat, return_counts=True)
        dup = uniq[counts > 1]
        if len(dup):
            out.append(Violation("duplicate sample",
                                 tuple((int(i // width), int(i % width)) for i in dup)))
    return out


def _check_points(points) -> list[Violation]:
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        return [Violation(f"points must be Nx3, got shape {p.shape}")]
    bad = ~np.isfinite(p).all(axis=1)
    if bad.any():
        return [Violation("non-finite point", _pixels(bad))]
    return []


# --- types ------------------------------------------------------------------


@dataclass(frozen=True)
class ImageBuffer:
    """Linear intensities in [0,1], shape (H, W, C) with C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self):
        _raise_if("ImageBuffer", _check_image(self.data))
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]


@dataclass(frozen=True)
class DepthMap:
    """Metric (or scaled) depth with an explicit validity mask."""

    depth: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        valid = self.valid
        if valid is None:
            valid = np.isfinite(depth) & (depth > 0)
        _raise_if("DepthMap", _check_depth(depth, valid))
        object.__setattr__(self, "depth", _frozen(depth))
        object.__setattr__(self, "valid", _frozen(valid, dtype=bool))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass(frozen=True)
class DisparityMap:
    x: np.ndarray

    def __post_init__(self):
        _raise_if("DisparityMap", _check_disparity(self.x))
        object.__setattr__(self, "x", _frozen(self.x))

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.shape


@dataclass(frozen=True)
class DepthRange:
    """Depth interval and learning scale of ``d = s / (a x + b)``."""

    d_min: float = 0.1
    d_max: float = 100.0
    s: float = 32.0

    def __post_init__(self):
        _raise_if("DepthRange", _check_range(self.d_min, self.d_max, self.s))

    @property
    def a(self) -> float:
        return 1.0 / self.d_min - 1.0 / self.d_max

    @property
    def b(self) -> float:
        return 1.0 / self.d_max

    @property
    def min_depth(self) -> float:
        return self.s * self.d_min

    @property
    def max_depth(self) -> float:
        return self.s * self.d_max


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        _raise_if("CameraIntrinsics", _check_intrinsics(self.fx, self.fy, self.cx, self.cy))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Rigid3:
    """Rigid motion p -> R p + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        _raise_if("Rigid3", _check_rigid(self.rotation, self.translation))
        object.__setattr__(self, "rotation", _frozen(self.rotation))
        object.__setattr__(self, "translation", _frozen(self.translation))

    @classmethod
    def identity(cls) -> Rigid3:
        return cls()

    @classmethod
    def from_matrix(cls, m) -> Rigid3:
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class MotionParams:
    """Axis-angle rotation (radians) plus translation."""

    axis_angle: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        _raise_if("MotionParams", _check_motion(self.axis_angle, self.translation))
        object.__setattr__(self, "axis_angle", _frozen(self.axis_angle))
        object.__setattr__(self, "translation", _frozen(self.translation))

    @classmethod
    def from_vector(cls, v) -> MotionParams:
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:3], v[3:6])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.axis_angle, self.translation])


@dataclass(frozen=True)
class SparseDepth:
    """Depth samples at integer pixels, stored in row-major scan order."""

    height: int
    width: int
    rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    depth: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        depth = np.asarray(self.depth, dtype=np.float64).ravel()
        _raise_if("SparseDepth", _check_sparse(self.height, self.width, rows, cols, depth))
        order = np.argsort(rows * self.width + cols, kind="stable")
        object.__setattr__(self, "rows", _frozen(rows[order], dtype=np.int64))
        object.__setattr__(self, "cols", _frozen(cols[order], dtype=np.int64))
        object.__setattr__(self, "depth", _frozen(depth[order]))

    def __len__(self) -> int:
        return len(self.depth)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def from_depth_map(cls, dm: DepthMap) -> SparseDepth:
        rows, cols = np.nonzero(dm.valid)
        return cls(dm.height, dm.width, rows, cols, dm.depth[rows, cols])

    def to_depth_map(self) -> DepthMap:
        depth = np.zeros((self.height, self.width))
        valid = np.zeros((self.height, self.width), dtype=bool)
        depth[self.rows, self.cols] = self.depth
        valid[self.rows, self.cols] = True
        return DepthMap(depth, valid)


@dataclass(frozen=True)
class ErrorMap:
    """Per-pixel error probability of a completed depth map (0 = fully trusted)."""

    err: np.ndarray

    def __post_init__(self):
        _raise_if("ErrorMap", _check_error(self.err))
        object.__setattr__(self, "err", _frozen(self.err))

    @property
    def shape(self) -> tuple[int, int]:
        return self.err.shape


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        _raise_if("PointCloud", _check_points(pts))
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return len(self.points)


_CHECKERS = {
    ImageBuffer: lambda f: _check_image(f["data"]),
    DepthMap: lambda f: _check_depth(f["depth"], f.get("valid", np.ones_like(f["depth"], dtype=bool))),
    DisparityMap: lambda f: _check_disparity(f["x"]),
    DepthRange: lambda f: _check_range(f.get("d_min", 0.1), f.get("d_max", 100.0), f.get("s", 32.0)),
    CameraIntrinsics: lambda f: _check_intrinsics(f["fx"], f["fy"], f["cx"], f["cy"]),
    Rigid3: lambda f: _check_rigid(f["rotation"], f["translation"]),
    MotionParams: lambda f: _check_motion(f["axis_angle"], f["translation"]),
    SparseDepth: lambda f: _check_sparse(f["height"], f["width"], f["rows"], f["cols"], f["depth"]),
    ErrorMap: lambda f: _check_error(f["err"]),
    PointCloud: lambda f: _check_points(f["points"]),
}


def _raise_if(kind: str, violations: list[Violation]) -> None:
    if violations:
        raise InvariantError(kind, violations)


def validate(value: Any, **fields) -> ValidationResult:
    """Check invariants of a core value without raising.

    Pass either a constructed instance, or a core type plus its raw fields::

        validate(DepthMap, depth=np.array([[-1.0]]))
    """
    if isinstance(value, type):
        if value not in _CHECKERS:
            raise TypeError(f"not a core type: {value!r}")
        return ValidationResult(tuple(_CHECKERS[value](fields)))
    kind = type(value)
    if kind not in _CHECKERS:
        raise TypeError(f"not a core value: {kind.__name__}")
    raw = {name: getattr(value, name) for name in value.__dataclass_fields__}
    return ValidationResult(tuple(_CHECKERS[kind](raw)))
