"""Accuracy of reconstructed DSMs and disparity maps, and per-AOI aggregation."""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyGroup, FrameMismatch, GridMismatch, NoEvaluablePixels
from .gt import discontinuity_mask
from .raster import Raster, ground_to_pixel


@dataclass
class EvalReport:
    pair_id: str
    mae_m: float
    rmse_m: float
    completeness: float
    n_eval: int
    aoi_id: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            pair_id=str(d["pair_id"]), mae_m=float(d["mae_m"]), rmse_m=float(d["rmse_m"]),
            completeness=float(d["completeness"]), n_eval=int(d["n_eval"]), aoi_id=d.get("aoi_id"),
        )


@dataclass
class AoiScore:
    aoi_id: str
    median_mae_m: float
    pair_reports: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"aoi_id": self.aoi_id, "median_mae_m": self.median_mae_m,
                "pair_reports": [r.to_dict() for r in self.pair_reports]}


def _errors(pred: np.ndarray, ref: np.ndarray):
    """MAE and RMSE of pred - ref, summed exactly in raster order."""
    e = (pred.astype(float) - ref.astype(float)).ravel()
    n = e.size
    mae = math.fsum(np.abs(e).tolist()) / n
    rmse = math.sqrt(math.fsum((e * e).tolist()) / n)
    return mae, max(rmse, mae)  # both are correctly rounded; keep mae <= rmse exact


def resample_nearest(pred: Raster, ref: Raster) -> np.ndarray:
    """``pred`` sampled at the cell centers of ``ref`` (nearest cell)."""
    if pred.geotransform is None and ref.geotransform is None:
        if pred.shape != ref.shape:
            raise GridMismatch(f"frames differ: {pred.shape} vs {ref.shape}")
        return np.asarray(pred.band(0), dtype=float)
    if pred.geotransform is None or ref.geotransform is None:
        raise GridMismatch("only one of the rasters is georeferenced")
    if pred.crs and ref.crs and pred.crs != ref.crs:
        raise GridMismatch(f"crs differ: {pred.crs} vs {ref.crs}")
    x, y = ref.cell_centers()
    c, r = ground_to_pixel(pred.geotransform, x, y)
    ci = np.floor(c).astype(np.intp)
    ri = np.floor(r).astype(np.intp)
    inside = (ci >= 0) & (ci < pred.width) & (ri >= 0) & (ri < pred.height)
    out = np.full(ref.shape, np.nan)
    out[inside] = np.asarray(pred.band(0), dtype=float)[ri[inside], ci[inside]]
    return out


def evaluable_mask(ref: Raster, veg: Raster | None = None, margin: int = 32,
                   edge_band: int = 0) -> np.ndarray:
    """Pixels of ``ref`` that take part in the evaluation.

    With ``edge_band`` > 0, cells within that many cells of an altitude
    jump above 1 m (or of nodata) in the reference are left out too.
    """
    z = np.asarray(ref.band(0), dtype=float)
    mask = np.isfinite(z)
    if edge_band > 0:
        mask &= ~discontinuity_mask(z, jump=1.0, dilate=edge_band)
    if margin > 0:
        crop = np.zeros_like(mask)
        crop[margin:-margin, margin:-margin] = True
        mask &= crop
    if veg is not None:
        if veg.shape != ref.shape:
            raise GridMismatch(f"vegetation mask {veg.shape} does not match reference {ref.shape}")
        v = np.asarray(veg.band(0), dtype=float)
        mask &= ~(np.isfinite(v) & (v != 0))
    return mask


def dsm_mae(pred: Raster, ref: Raster, veg: Raster | None = None, margin: int = 32,
            pair_id: str = "", aoi_id: str | None = None, edge_band: int = 0) -> EvalReport:
    """Altitude error of a DSM against a reference.

    The prediction is resampled onto the reference grid by nearest
    neighbor. Pixels count when they are inside the margin-cropped
    reference, not vegetation and valid in the reference; error statistics
    use those that are also valid in the prediction, and completeness is
    the fraction that are.
    """
    p = resample_nearest(pred, ref)
    evaluable = evaluable_mask(ref, veg, margin, edge_band)
    n_total = int(evaluable.sum())
    if n_total == 0:
        raise NoEvaluablePixels("no evaluable reference pixel")
    used = evaluable & np.isfinite(p)
    n = int(used.sum())
    if n == 0:
        raise NoEvaluablePixels("the prediction has no valid pixel in the evaluable set")
    mae, rmse = _errors(p[used], np.asarray(ref.band(0), dtype=float)[used])
    return EvalReport(pair_id, mae, rmse, n / n_total, n, aoi_id)


def disp_error(pred: Raster, gt: Raster, margin: int = 0) -> tuple[float, float]:
    """(MAE, RMSE) in pixels over jointly valid, margin-cropped pixels."""
    if pred.shape != gt.shape:
        raise FrameMismatch(f"frames differ: {pred.shape} vs {gt.shape}")
    a = np.asarray(pred.band(0), dtype=float)
    b = np.asarray(gt.band(0), dtype=float)
    ok = np.isfinite(a) & np.isfinite(b)
    if margin > 0:
        crop = np.zeros_like(ok)
        crop[margin:-margin, margin:-margin] = True
        ok &= crop
    if not ok.any():
        raise NoEvaluablePixels("no jointly valid pixel")
    return _errors(a[ok], b[ok])


def aggregate(groups):
    """Per-AOI median MAE, then mean and population std over AOIs.

    Args:
        groups: mapping aoi_id -> list of EvalReport, or an iterable of
            reports carrying ``aoi_id``.

    Returns:
        (list of AoiScore sorted by aoi_id, dataset mean, dataset std).
    """
    if not isinstance(groups, dict):
        by_aoi: dict = {}
        for r in groups:
            if r.aoi_id is None:
                raise EmptyGroup(f"report {r.pair_id!r} has no aoi_id")
            by_aoi.setdefault(r.aoi_id, []).append(r)
        groups = by_aoi
    if not groups:
        raise EmptyGroup("no AOI to aggregate")
    scores = []
    for aoi in sorted(groups):
        reports = sorted(groups[aoi], key=lambda r: r.pair_id)
        if not reports:
            raise EmptyGroup(f"AOI {aoi!r} has no report")
        scores.append(AoiScore(aoi, statistics.median(r.mae_m for r in reports), reports))
    values = sorted(s.median_mae_m for s in scores)
    mean = statistics.fmean(values)
    std = statistics.pstdev(values) if len(values) > 1 else 0.0
    return scores, mean, std
