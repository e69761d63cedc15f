"""Ground-truth disparity maps in rectified coordinates from a reference DSM."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DomainWarning, EmptyOverlap, NoGeotransform
from .geo import local_to_lonlat, parse_crs
from .raster import Raster, bilinear_sample
from .rpc import RpcModel, localize, project

log = logging.getLogger(__name__)

DISCONTINUITY_M = 1.0
DISCONTINUITY_DILATE = 2


def dsm_origin(dsm: Raster, rpc: RpcModel | None = None) -> tuple[float, float]:
    """(lon0, lat0) of a DSM's local metric frame.

    Taken from its crs tag, else from the camera's normalization center.
    """
    origin = parse_crs(dsm.crs)
    if origin is None:
        if rpc is None:
            raise NoGeotransform("DSM crs has no equirect origin and no camera was given")
        origin = (rpc.lon_off, rpc.lat_off)
    return origin


def project_dsm(dsm: Raster, rpc: RpcModel, frame_w: int, frame_h: int,
                fill_radius: int = 2, splat_radius: int = 1) -> Raster:
    """Render DSM altitudes into the image frame of ``rpc``.

    Every valid cell center is projected and splatted over a
    (2 splat_radius + 1)^2 pixel neighborhood; where several cells land on
    a pixel the highest one wins. Nodata components no farther than
    ``fill_radius`` pixels from valid data are then filled with the nearest
    valid value; larger holes are left as nodata.
    """
    if dsm.geotransform is None:
        raise NoGeotransform("DSM has no geotransform")
    z = np.asarray(dsm.band(0), dtype=float)
    x, y = dsm.cell_centers()
    ok = np.isfinite(z)
    lon, lat = local_to_lonlat(x[ok], y[ok], dsm_origin(dsm, rpc))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DomainWarning)
        col, row = project(rpc, lon, lat, z[ok])
    ci = np.rint(col).astype(np.intp)
    ri = np.rint(row).astype(np.intp)
    zv = z[ok]

    out = np.full(frame_h * frame_w, -np.inf)
    for dr in range(-splat_radius, splat_radius + 1):
        for dc in range(-splat_radius, splat_radius + 1):
            c, r = ci + dc, ri + dr
            inside = (c >= 0) & (c < frame_w) & (r >= 0) & (r < frame_h)
            np.maximum.at(out, r[inside] * frame_w + c[inside], zv[inside])
    out = out.reshape(frame_h, frame_w)
    valid = np.isfinite(out)
    if not valid.any():
        raise EmptyOverlap("no DSM cell projects into the image frame")
    out[~valid] = np.nan

    if fill_radius > 0 and not valid.all():
        dist, (ir, ic) = ndimage.distance_transform_edt(~valid, return_indices=True)
        labels, n = ndimage.label(~valid)
        if n:
            far = ndimage.maximum(dist, labels, index=np.arange(1, n + 1))
            small = np.concatenate([[False], np.asarray(far) <= fill_radius])[labels]
            out[small] = out[ir[small], ic[small]]
    return Raster(out)


def discontinuity_mask(alt: np.ndarray, jump: float = DISCONTINUITY_M,
                       dilate: int = DISCONTINUITY_DILATE) -> np.ndarray:
    """Pixels within ``dilate`` of a 3x3 altitude range above ``jump``, or of nodata."""
    filled = np.where(np.isfinite(alt), alt, np.nan)
    hi = ndimage.maximum_filter(np.nan_to_num(filled, nan=-np.inf), size=3)
    lo = ndimage.minimum_filter(np.nan_to_num(filled, nan=np.inf), size=3)
    edge = (hi - lo > jump) | ~np.isfinite(alt)
    if dilate > 0:
        edge = ndimage.binary_dilation(edge, iterations=dilate)
    return edge


@dataclass
class GtResult:
    """Disparity supervision for one rectified pair.

    Attributes:
        disparity: D = u - u_R, nodata where undefined.
        confidence: 1 on valid pixels away from depth discontinuities, else 0.
        dv: vertical residual v - v_R of the same chain.
        n_failed: pixels lost to localization failures.
        dsm_l: the DSM projected into the (rectified-left) original frame.
    """

    disparity: Raster
    confidence: Raster
    dv: Raster
    n_failed: int
    dsm_l: Raster


def sample_altitude(dsm_l: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear lookup with nearest-neighbor fallback where the stencil hits nodata."""
    z = bilinear_sample(dsm_l, x, y)
    h, w = dsm_l.shape
    miss = ~np.isfinite(z) & (x > -0.5) & (x < w - 0.5) & (y > -0.5) & (y < h - 0.5)
    if miss.any():
        xi = np.clip(np.rint(x[miss]).astype(np.intp), 0, w - 1)
        yi = np.clip(np.rint(y[miss]).astype(np.intp), 0, h - 1)
        z[miss] = dsm_l[yi, xi]
    return z


def compute_gt(rect, dsm: Raster, rpc_l: RpcModel | None = None, rpc_r: RpcModel | None = None,
               fill_radius: int = 2) -> GtResult:
    """Ground-truth disparity, confidence and vertical residual.

    Args:
        rect: a RectificationResult.
        dsm: reference DSM with geotransform.
        rpc_l, rpc_r: the cameras in the order they were given to
            rectify_pair (the swap is applied here); default to the ones
            stored in ``rect``.
    """
    cam_l, cam_r = rect.cameras(rpc_l, rpc_r)
    lw, lh = rect.left_size
    dsm_l = project_dsm(dsm, cam_l, lw, lh, fill_radius=fill_radius)
    zl = np.asarray(dsm_l.data, dtype=float)

    ow, oh = rect.out_size
    u, v = np.meshgrid(np.arange(ow, dtype=float), np.arange(oh, dtype=float))
    x, y = rect.H_L.inverse()(u, v)
    z = sample_altitude(zl, x, y)
    has_z = np.isfinite(z)
    lon, lat = localize(cam_l, x, y, np.where(has_z, z, cam_l.height_off), strict=False)
    failed = has_z & ~np.isfinite(lon)
    ok = has_z & ~failed
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DomainWarning)
        xr, yr = project(cam_r, np.where(ok, lon, cam_r.lon_off), np.where(ok, lat, cam_r.lat_off),
                         np.where(ok, z, cam_r.height_off))
    ur, vr = rect.H_R(xr, yr)
    disp = np.where(ok, u - ur, np.nan)
    dv = np.where(ok, v - vr, np.nan)

    edge = discontinuity_mask(zl)
    xi = np.clip(np.rint(x).astype(np.intp), 0, lw - 1)
    yi = np.clip(np.rint(y).astype(np.intp), 0, lh - 1)
    conf = (ok & ~edge[yi, xi]).astype(np.float32)
    n_failed = int(failed.sum())
    if n_failed:
        log.warning("%d pixel(s) failed to localize and were set to nodata", n_failed)
    return GtResult(Raster(disp), Raster(conf), Raster(dv), n_failed, dsm_l)


def gt_disparity(rect, dsm: Raster, rpc_l: RpcModel | None = None,
                 rpc_r: RpcModel | None = None) -> Raster:
    """D(u, v) = u - u_R on the rectified-left grid; see :func:`compute_gt`."""
    return compute_gt(rect, dsm, rpc_l, rpc_r).disparity
