"""Depth evaluation: SILog, the standard error/accuracy metrics, median scaling."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .core import DepthMap, SparseDepth

METRIC_FIELDS = ("silog", "abs_rel", "sq_rel", "rmse", "rmse_log", "mae", "irmse", "delta1", "delta2", "delta3")


class MetricError(ValueError):
    """Too few co-valid pixels, or an invalid scale."""

    def __init__(self, message: str, image_index: int | None = None):
        self.image_index = image_index
        if image_index is not None:
            message = f"image {image_index}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class EvalOptions:
    """``crop`` is (top, bottom, left, right) in pixels, bottom/right exclusive."""

    crop: tuple[int, int, int, int] | None = None
    clamp: tuple[float, float] | None = None
    pooled: bool = False


@dataclass(frozen=True)
class MetricReport:
    silog: float
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    mae: float
    irmse: float
    delta1: float
    delta2: float
    delta3: float
    image_count: int = 1
    evaluated_pixel_total: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["silog_x1e3"] = self.silog * 1e3
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        return "\n".join(f"{k}={v!r}" for k, v in self.to_dict().items()) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> MetricReport:
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ScaleStats:
    per_image_ratios: tuple[float, ...]
    mean: float
    std: float

    def histogram(self, bins: int = 10, width: int = 40) -> str:
        counts, edges = np.histogram(self.per_image_ratios, bins=bins)
        top = max(int(counts.max()), 1)
        lines = []
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            lines.append(f"[{lo:10.4f}, {hi:10.4f}) {int(c):6d} " + "#" * round(width * c / top))
        return "\n".join(lines)


def _as_arrays(d) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(d, SparseDepth):
        d = d.to_depth_map()
    if isinstance(d, DepthMap):
        return d.depth, d.valid
    arr = np.asarray(d, dtype=np.float64)
    return arr, np.isfinite(arr) & (arr > 0)


def co_valid(pred, gt, options: EvalOptions = EvalOptions()) -> tuple[np.ndarray, np.ndarray]:
    """Prediction and ground-truth values on the pixels valid in both."""
    p, pv = _as_arrays(pred)
    g, gv = _as_arrays(gt)
    if p.shape != g.shape:
        raise MetricError(f"prediction shape {p.shape} != ground truth shape {g.shape}")
    sel = pv & gv & (g > 0)
    if options.crop is not None:
        top, bottom, left, right = options.crop
        box = np.zeros_like(sel)
        box[top:bottom, left:right] = True
        sel &= box
    pvals = p[sel]
    if options.clamp is not None:
        pvals = np.clip(pvals, *options.clamp)
    return pvals, g[sel]


def _silog(p, g) -> float:
    # two-pass variance: equal to mean(y^2) - mean(y)^2 without the cancellation
    y = np.log(p) - np.log(g)
    return float(np.var(y))


def silog_image(pred, gt, options: EvalOptions = EvalOptions()) -> float:
    """mean(y^2) - mean(y)^2 with y = log pred - log gt over co-valid pixels."""
    p, g = co_valid(pred, gt, options)
    if len(p) < 2:
        raise MetricError(f"SILog needs at least 2 co-valid pixels, got {len(p)}")
    return _silog(p, g)


def _standard(p, g) -> dict:
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return {
        "abs_rel": float(np.mean(np.abs(diff) / g)),
        "sq_rel": float(np.mean(diff * diff / g)),
        "rmse": float(np.sqrt(np.mean(diff * diff))),
        "rmse_log": float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        "mae": float(np.mean(np.abs(diff))),
        "irmse": float(np.sqrt(np.mean((1 / p - 1 / g) ** 2))),
        "delta1": float(np.mean(ratio < 1.25)),
        "delta2": float(np.mean(ratio < 1.25**2)),
        "delta3": float(np.mean(ratio < 1.25**3)),
    }


def standard_metrics(pred, gt, options: EvalOptions = EvalOptions()) -> dict:
    """AbsRel, SqRel, RMSE, RMSE log, MAE, iRMSE and delta accuracies for one image."""
    p, g = co_valid(pred, gt, options)
    if len(p) == 0:
        raise MetricError("no co-valid pixels")
    return _standard(p, g)


def image_report(pred, gt, options: EvalOptions = EvalOptions()) -> MetricReport:
    p, g = co_valid(pred, gt, options)
    if len(p) < 2:
        raise MetricError(f"need at least 2 co-valid pixels, got {len(p)}")
    return MetricReport(silog=_silog(p, g), **_standard(p, g), image_count=1, evaluated_pixel_total=len(p))


def evaluate_dataset(pairs, options: EvalOptions = EvalOptions()) -> MetricReport:
    """Average per-image metrics with equal image weight.

    With ``options.pooled`` the non-SILog metrics are computed over all
    pixels pooled together; SILog is always the mean of per-image values.
    """
    pairs = list(pairs)
    if not pairs:
        raise MetricError("empty dataset")
    reports, pooled_p, pooled_g = [], [], []
    for i, (pred, gt) in enumerate(pairs):
        try:
            reports.append(image_report(pred, gt, options))
        except MetricError as exc:
            raise MetricError(str(exc), image_index=i) from None
        if options.pooled:
            p, g = co_valid(pred, gt, options)
            pooled_p.append(p)
            pooled_g.append(g)
    silog = float(np.mean([rep.silog for rep in reports]))
    if options.pooled:
        rest = _standard(np.concatenate(pooled_p), np.concatenate(pooled_g))
    else:
        rest = {k: float(np.mean([getattr(rep, k) for rep in reports])) for k in METRIC_FIELDS[1:]}
    return MetricReport(
        silog=silog,
        **rest,
        image_count=len(reports),
        evaluated_pixel_total=sum(rep.evaluated_pixel_total for rep in reports),
    )


def _lower_median(a: np.ndarray) -> float:
    return float(np.sort(a)[(len(a) - 1) // 2])


def median_scale(pred, gt, options: EvalOptions = EvalOptions()) -> float:
    """median(gt) / median(pred) over co-valid pixels (lower middle for even counts)."""
    p, g = co_valid(pred, gt, options)
    if len(p) == 0:
        raise MetricError("no co-valid pixels")
    mp = _lower_median(p)
    if mp == 0:
        raise MetricError("predicted median is zero")
    return _lower_median(g) / mp


def global_scale_statistics(pairs, options: EvalOptions = EvalOptions()) -> ScaleStats:
    """Mean and population std of per-image median ratios."""
    ratios = []
    for i, (pred, gt) in enumerate(pairs):
        try:
            ratios.append(median_scale(pred, gt, options))
        except MetricError as exc:
            raise MetricError(str(exc), image_index=i) from None
    if not ratios:
        raise MetricError("empty dataset")
    arr = np.array(ratios)
    return ScaleStats(tuple(ratios), float(arr.mean()), float(arr.std()))


def apply_scale(pred: DepthMap, c: float) -> DepthMap:
    if not (np.isfinite(c) and c > 0):
        raise MetricError(f"scale must be positive, got {c}")
    return DepthMap(np.where(pred.valid, pred.depth * c, pred.depth), pred.valid)
