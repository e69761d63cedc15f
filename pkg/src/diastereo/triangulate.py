"""Altitude images from disparity maps, and their gridding into DSMs."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainWarning, EmptyInput, NoConvergence, OutOfBounds
from .geo import equirect_crs, lonlat_to_local, parse_crs
from .raster import Raster
from .rpc import RpcModel, localize, project

log = logging.getLogger(__name__)

NEWTON_TOL_M = 1e-3
NEWTON_MAX_ITER = 50
SECANT_STEP_M = 1.0
GOLDEN_EVALS = 60
_INVPHI = (math.sqrt(5) - 1) / 2


class _Residual:
    """Epipolar residual r(h) of a batch of rectified pixels.

    For each pixel p = (u, v) with disparity d, the left original pixel
    H_L^-1(p) is localized at altitude h, projected in the right camera and
    mapped through H_R; the residual is the offset to (u - d, v).
    """

    def __init__(self, u, v, d, rect, cam_l: RpcModel, cam_r: RpcModel):
        self.x, self.y = rect.H_L.inverse()(u, v)
        self.tu = u - d
        self.tv = v
        self.H_R = rect.H_R
        self.cam_l, self.cam_r = cam_l, cam_r
        self.guess = None

    def __call__(self, h, idx=None):
        """(du, dv) at altitude h for the pixels ``idx`` (all by default)."""
        sl = slice(None) if idx is None else idx
        x, y, tu, tv = self.x[sl], self.y[sl], self.tu[sl], self.tv[sl]
        lon, lat = localize(self.cam_l, x, y, h, strict=False)
        bad = ~np.isfinite(lon)
        if bad.all():
            return np.full_like(x, np.nan), np.full_like(x, np.nan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DomainWarning)
            xr, yr = project(self.cam_r, np.where(bad, self.cam_r.lon_off, lon),
                             np.where(bad, self.cam_r.lat_off, lat),
                             np.broadcast_to(h, x.shape))
        ur, vr = self.H_R(xr, yr)
        du = np.where(bad, np.nan, ur - tu)
        dv = np.where(bad, np.nan, vr - tv)
        return du, dv

    def norm(self, h, idx=None):
        du, dv = self(h, idx)
        return np.hypot(du, dv)


def _golden(res: _Residual, idx, lo: float, hi: float, n_evals: int = GOLDEN_EVALS):
    """Golden-section minimization of r(h) on [lo, hi] for pixels idx."""
    a = np.full(idx.size, lo, dtype=float)
    b = np.full(idx.size, hi, dtype=float)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc = res.norm(c, idx)
    fd = res.norm(d, idx)
    for _ in range(max(0, n_evals - 2)):
        left = ~(fc > fd)  # NaN-safe: keep the left bracket unless fc > fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - _INVPHI * (b - a)
        new_d = a + _INVPHI * (b - a)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        f_eval = res.norm(np.where(left, new_c, new_d), idx)
        fc, fd = np.where(left, f_eval, fd), np.where(left, fc, f_eval)
        c, d = c_next, d_next
    return (a + b) / 2


def solve_heights(res: _Residual, n: int, h_bounds, tol: float = NEWTON_TOL_M,
                  max_iter: int = NEWTON_MAX_ITER):
    """Vectorized minimization of r(h) over h_bounds.

    Gauss-Newton on the residual vector with secant derivatives, started
    at the middle of the bounds; pixels that do not converge, or step
    outside the bounds, are redone by golden-section search.

    Returns:
        (h, r, status) with status 0 = converged inside the bounds,
        1 = pinned at a bound, 2 = residual undefined.
    """
    lo, hi = float(h_bounds[0]), float(h_bounds[1])
    if not hi > lo:
        raise ValueError("degenerate altitude bounds")
    h = np.full(n, (lo + hi) / 2)
    active = np.arange(n)
    done = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        if active.size == 0:
            break
        ha = h[active]
        du0, dv0 = res(ha, active)
        du1, dv1 = res(ha + SECANT_STEP_M, active)
        gu = (du1 - du0) / SECANT_STEP_M
        gv = (dv1 - dv0) / SECANT_STEP_M
        den = gu * gu + gv * gv
        with np.errstate(invalid="ignore", divide="ignore"):
            step = -(du0 * gu + dv0 * gv) / den
        ok = np.isfinite(step)
        h_new = np.where(ok, ha + step, ha)
        conv = ok & (np.abs(step) < tol)
        h[active] = h_new
        done[active[conv]] = True
        wild = ~ok | (h_new < lo - (hi - lo)) | (h_new > hi + (hi - lo))
        active = active[~conv & ~wild]

    fallback = np.flatnonzero(~done | (h < lo) | (h > hi))
    if fallback.size:
        h[fallback] = _golden(res, fallback, lo, hi)
    r = res.norm(h)
    status = np.zeros(n, dtype=np.int8)
    if fallback.size:
        span = hi - lo
        pinned = (h[fallback] - lo < 1e-6 * span + tol) | (hi - h[fallback] < 1e-6 * span + tol)
        status[fallback[pinned]] = 1
    status[~np.isfinite(r)] = 2
    return h, r, status


def triangulate_pixel(p_rect, d: float, rect, rpc_l: RpcModel | None = None,
                      rpc_r: RpcModel | None = None, h_bounds=None):
    """Altitude of one rectified-left pixel with disparity d.

    Args:
        p_rect: (u, v) in the rectified-left frame.
        d: disparity u - u_R in pixels.
        rect: RectificationResult.
        rpc_l, rpc_r: cameras in rectify_pair's input order (default: rect's).
        h_bounds: (h_min, h_max) search interval.

    Returns:
        (h, residual) in meters and pixels.

    Raises:
        OutOfBounds: the minimizer is pinned at a bound.
        NoConvergence: the residual is undefined along the search interval.
    """
    cam_l, cam_r = rect.cameras(rpc_l, rpc_r)
    if h_bounds is None:
        h_bounds = default_bounds(rect)
    res = _Residual(np.array([float(p_rect[0])]), np.array([float(p_rect[1])]), np.array([float(d)]),
                    rect, cam_l, cam_r)
    h, r, status = solve_heights(res, 1, h_bounds)
    if status[0] == 2:
        raise NoConvergence("epipolar residual undefined for this pixel")
    if status[0] == 1:
        raise OutOfBounds(float(h[0]), float(r[0]))
    return float(h[0]), float(r[0])


def default_bounds(rect, margin: float = 20.0):
    lo, hi = rect.h_range
    return lo - margin, hi + margin


@dataclass
class AltitudeImage:
    """Per-pixel altitudes in the rectified-left frame.

    Attributes:
        raster: 2 channels, altitude (m) and epipolar residual (px).
        counts: number of pixels per outcome: "valid", "nodata_input",
            "out_of_bounds", "failed".
    """

    raster: Raster
    counts: dict

    @property
    def altitude(self) -> np.ndarray:
        return self.raster.band(0)

    @property
    def residual(self) -> np.ndarray:
        return self.raster.band(1)


def triangulate(disp: Raster, rect, rpc_l: RpcModel | None = None, rpc_r: RpcModel | None = None,
                h_bounds=None) -> AltitudeImage:
    """Altitude image of a disparity map; nodata propagates.

    Pixels whose minimizer is pinned at a bound, or whose residual is
    undefined, become nodata and are counted.
    """
    cam_l, cam_r = rect.cameras(rpc_l, rpc_r)
    if h_bounds is None:
        h_bounds = default_bounds(rect)
    D = np.asarray(disp.band(0), dtype=float)
    rows, cols = np.nonzero(np.isfinite(D))
    out = np.full(D.shape + (2,), np.nan, dtype=np.float32)
    counts = {"valid": 0, "nodata_input": int(D.size - rows.size), "out_of_bounds": 0, "failed": 0}
    if rows.size:
        res = _Residual(cols.astype(float), rows.astype(float), D[rows, cols], rect, cam_l, cam_r)
        h, r, status = solve_heights(res, rows.size, h_bounds)
        good = status == 0
        out[rows[good], cols[good], 0] = h[good]
        out[rows[good], cols[good], 1] = r[good]
        counts["valid"] = int(good.sum())
        counts["out_of_bounds"] = int((status == 1).sum())
        counts["failed"] = int((status == 2).sum())
    if counts["out_of_bounds"] or counts["failed"]:
        log.info("triangulation: %s", counts)
    return AltitudeImage(Raster(out), counts)


def grid_dsm(alt, rect, rpc_l: RpcModel | None = None, cell: float = 0.5, agg: str = "median",
             origin=None) -> Raster:
    """Bin an altitude image onto a north-up metric grid.

    Every valid pixel is localized at its altitude through the
    rectified-left camera and expressed in meters about ``origin``
    (lon0, lat0), by default the camera's normalization center. Cell edges
    sit on multiples of ``cell``. Per-cell values are the median (mean of
    the two middle samples for even counts), max or mean of the
    contributions; empty cells are nodata.

    Args:
        alt: AltitudeImage or altitude Raster in the rectified-left frame.
        rect: RectificationResult.
        rpc_l: camera of the rectified left image (default: rect's).
        origin: (lon0, lat0) or an equirect crs string.
    """
    if cell <= 0:
        raise ValueError("cell must be positive")
    if agg not in ("median", "max", "mean"):
        raise ValueError(f"unknown aggregator {agg!r}")
    cam = rpc_l if rpc_l is not None else rect.rpc_left
    raster = alt.raster if isinstance(alt, AltitudeImage) else alt
    z = np.asarray(raster.band(0), dtype=float)
    rows, cols = np.nonzero(np.isfinite(z))
    if rows.size == 0:
        raise EmptyInput("altitude image has no valid pixel")
    if isinstance(origin, str):
        origin = parse_crs(origin)
    if origin is None:
        origin = (cam.lon_off, cam.lat_off)

    zv = z[rows, cols]
    x, y = rect.H_L.inverse()(cols.astype(float), rows.astype(float))
    lon, lat = localize(cam, x, y, zv, strict=False)
    ok = np.isfinite(lon)
    gx, gy = lonlat_to_local(lon[ok], lat[ok], origin)
    zv = zv[ok]
    if zv.size == 0:
        raise EmptyInput("no pixel could be localized")

    x0 = math.floor(gx.min() / cell) * cell
    y_top = math.ceil(gy.max() / cell) * cell
    ci = np.floor((gx - x0) / cell).astype(np.intp)
    ri = np.floor((y_top - gy) / cell).astype(np.intp)
    ri = np.maximum(ri, 0)  # a sample exactly on the top edge
    w = int(ci.max()) + 1
    h = int(ri.max()) + 1
    key = ri * w + ci
    order = np.lexsort((zv, key))
    key, zs = key[order], zv[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    counts = np.diff(np.r_[starts, key.size])
    if agg == "max":
        vals = zs[starts + counts - 1]
    elif agg == "mean":
        vals = np.add.reduceat(zs, starts) / counts
    else:
        lo = zs[starts + (counts - 1) // 2]
        hi = zs[starts + counts // 2]
        vals = (lo + hi) / 2
    grid = np.full(h * w, np.nan)
    grid[key[starts]] = vals
    return Raster(grid.reshape(h, w), geotransform=(x0, cell, 0.0, y_top, 0.0, -cell),
                  crs=equirect_crs(*origin))
