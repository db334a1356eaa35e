"""Region-restricted evaluation metrics and their aggregation.

Per case, metrics compare prediction and ground truth on the healthy
mask only, after both volumes are scaled by the ground truth's maximum
over the healthy and unhealthy regions together. SSIM is computed on
the healthy mask's bounding box.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .losses import SsimParams, ssim3d
from .volume import MaskVolume, Volume


@dataclass(frozen=True)
class CaseMetrics:
    case_id: str
    ssim: float
    psnr: float
    mse: float
    rmse: float
    region_voxels: int
    psnr_infinite: bool = False


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    std: float
    p25: float
    median: float
    p75: float


@dataclass(frozen=True)
class EvaluationSummary:
    mse: SummaryStats
    psnr: SummaryStats | None
    ssim: SummaryStats
    rmse: SummaryStats
    case_count: int
    psnr_infinite_count: int


def region_max_intensity(gt: Volume, healthy: MaskVolume, unhealthy: MaskVolume) -> float:
    """Ground-truth maximum over the union of both mask regions."""
    union = healthy.bits | unhealthy.bits
    if not union.any():
        raise DataError("both mask regions are empty")
    return float(gt.voxels[union].max())


def _bounding_box(bits: np.ndarray, min_extent: int) -> tuple[slice, slice, slice]:
    """Tight bounding box, symmetrically widened to at least min_extent."""
    coords = np.argwhere(bits)
    lo = coords.min(axis=0)
    hi = coords.max(axis=0) + 1
    slices = []
    for axis, n in enumerate(bits.shape):
        a, b = int(lo[axis]), int(hi[axis])
        while b - a < min_extent:
            if a > 0:
                a -= 1
            if b - a < min_extent and b < n:
                b += 1
            if a == 0 and b == n:
                break
        if b - a < min_extent:
            raise ShapeError(f"volume extent {n} on axis {axis} is below the SSIM window {min_extent}")
        slices.append(slice(a, b))
    return tuple(slices)


def evaluate_case(case_id: str, pred: Volume, gt: Volume, healthy: MaskVolume,
                  region_max: float, ssim_params: SsimParams = SsimParams()) -> CaseMetrics:
    """Healthy-region MSE/RMSE/PSNR plus bounding-box SSIM for one case.

    PSNR uses peak 1.0 on the scaled volumes; a zero MSE reports an
    infinite PSNR with the psnr_infinite flag set.
    """
    if pred.dims != gt.dims or healthy.dims != gt.dims:
        raise ShapeError(f"dims disagree: pred {pred.dims}, gt {gt.dims}, mask {healthy.dims}")
    if not healthy.bits.any():
        raise DataError(f"{case_id}: healthy mask is empty")
    if region_max <= 0:
        raise DataError(f"{case_id}: region max {region_max} must be positive")

    scale = np.float64(1.0 / region_max)
    pred_s = pred.voxels.astype(np.float64) * scale
    gt_s = gt.voxels.astype(np.float64) * scale

    diff = pred_s[healthy.bits] - gt_s[healthy.bits]
    mse = float(np.mean(diff * diff))
    rmse = math.sqrt(mse)
    if mse == 0.0:
        psnr, infinite = math.inf, True
    else:
        psnr, infinite = -10.0 * math.log10(mse), False

    box = _bounding_box(healthy.bits, ssim_params.window_size)
    ssim = float(ssim3d(pred_s[box], gt_s[box], ssim_params).item())

    return CaseMetrics(case_id=case_id, ssim=ssim, psnr=psnr, mse=mse, rmse=rmse,
                       region_voxels=int(healthy.bits.sum()), psnr_infinite=infinite)


def _stats(values: list[float]) -> SummaryStats:
    arr = np.asarray(values, dtype=np.float64)
    q25, q50, q75 = np.percentile(arr, [25, 50, 75])  # linear interpolation
    return SummaryStats(mean=float(arr.mean()), std=float(arr.std()),  # population std
                        p25=float(q25), median=float(q50), p75=float(q75))


def aggregate_stats(cases: list[CaseMetrics]) -> EvaluationSummary:
    """Summary statistics per metric over the case list.

    Infinite-PSNR cases are excluded from the PSNR aggregation and only
    counted; every other metric uses all cases.
    """
    if not cases:
        raise DataError("aggregate_stats needs at least one case")
    finite_psnr = [c.psnr for c in cases if not c.psnr_infinite]
    return EvaluationSummary(
        mse=_stats([c.mse for c in cases]),
        psnr=_stats(finite_psnr) if finite_psnr else None,
        ssim=_stats([c.ssim for c in cases]),
        rmse=_stats([c.rmse for c in cases]),
        case_count=len(cases),
        psnr_infinite_count=sum(1 for c in cases if c.psnr_infinite),
    )


# -- serialization and the report table ----------------------------------------

_STAT_ROWS = (
    ("mean", "Mean"),
    ("std", "Standard deviation"),
    ("p25", "25 quantile"),
    ("median", "Median"),
    ("p75", "75 quantile"),
)
_METRIC_COLUMNS = ("mse", "psnr", "ssim")


def summary_to_dict(summary: EvaluationSummary) -> dict:
    def pack(s: SummaryStats | None):
        if s is None:
            return None
        return {"mean": s.mean, "std": s.std, "p25": s.p25, "median": s.median, "p75": s.p75}

    return {
        "mse": pack(summary.mse),
        "psnr": pack(summary.psnr),
        "ssim": pack(summary.ssim),
        "rmse": pack(summary.rmse),
        "case_count": summary.case_count,
        "psnr_infinite_count": summary.psnr_infinite_count,
    }


def write_cases_csv(cases: list[CaseMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case", "ssim", "psnr", "mse", "rmse", "region_voxels"])
        for c in cases:
            writer.writerow([c.case_id, repr(c.ssim), repr(c.psnr), repr(c.mse),
                             repr(c.rmse), c.region_voxels])


def render_report_table(summary: dict) -> str:
    """Fixed-width table: one row per statistic, columns MSE, PSNR, SSIM."""
    def cell(metric: str, key: str) -> str:
        block = summary.get(metric)
        if block is None or block.get(key) is None:
            return "n/a"
        return f"{block[key]:.8f}"

    header = f"{'':22}" + "".join(f"{name.upper():>16}" for name in _METRIC_COLUMNS)
    lines = [header]
    for key, label in _STAT_ROWS:
        row = f"{label:22}" + "".join(f"{cell(m, key):>16}" for m in _METRIC_COLUMNS)
        lines.append(row)
    if summary.get("psnr_infinite_count"):
        lines.append(f"(PSNR excludes {summary['psnr_infinite_count']} case(s) with zero error)")
    return "\n".join(lines) + "\n"
