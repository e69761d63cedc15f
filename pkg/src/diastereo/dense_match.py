"""Dense disparity: a ZNCC block matcher and import of external maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BadDisparityRange, BipolarDisparityError
from .raster import Raster, read_raster

PERFECT_ZNCC = 1.0 - 1e-9
MIN_VARIANCE = 1e-6


@dataclass
class DenseConfig:
    d_min: int = 0
    d_max: int = 128
    window: int = 9
    lr_tol: float = 1.0
    subpixel: bool = True

    def __post_init__(self):
        if self.d_min > self.d_max:
            raise BadDisparityRange(f"d_min {self.d_min} > d_max {self.d_max}")
        if self.window < 3 or self.window % 2 == 0:
            raise BadDisparityRange("window must be odd and at least 3")


def _shift(a: np.ndarray, d: int, fill=np.nan) -> np.ndarray:
    """out[:, u] = a[:, u - d]."""
    out = np.full_like(a, fill)
    w = a.shape[1]
    if d >= 0:
        if d < w:
            out[:, d:] = a[:, :w - d]
    elif -d < w:
        out[:, :d] = a[:, -d:]
    return out


def zncc_volume(left: np.ndarray, right: np.ndarray, d_min: int, d_max: int, window: int) -> np.ndarray:
    """ZNCC of left(u, v) against right(u - d, v) for every d.

    Returns:
        (n_d, h, w) array; NaN where a window touches nodata, the border,
        or has no variance.
    """
    size = window
    vl = np.isfinite(left)
    vr = np.isfinite(right)
    L = np.where(vl, left, 0.0).astype(float)
    R = np.where(vr, right, 0.0).astype(float)

    def box(a):
        return ndimage.uniform_filter(a, size=size, mode="constant", cval=0.0)

    full = box(vl.astype(float)) > 1 - 1e-9
    full_r = box(vr.astype(float)) > 1 - 1e-9
    border = np.zeros_like(full)
    half = size // 2
    border[half:-half or None, half:-half or None] = True
    full &= border
    full_r &= border
    mu_l = box(L)
    var_l = box(L * L) - mu_l ** 2
    mu_r = box(R)
    var_r = box(R * R) - mu_r ** 2
    ok_l = full & (var_l > MIN_VARIANCE)
    ok_r = full_r & (var_r > MIN_VARIANCE)

    ds = range(d_min, d_max + 1)
    vol = np.full((len(ds), *left.shape), np.nan, dtype=np.float32)
    for k, d in enumerate(ds):
        Rd = _shift(R, d, 0.0)
        cross = box(L * Rd) - mu_l * _shift(mu_r, d)
        ok = ok_l & _shift(ok_r.astype(float), d, 0.0).astype(bool)
        with np.errstate(invalid="ignore", divide="ignore"):
            z = cross / np.sqrt(var_l * _shift(var_r, d))
        vol[k] = np.where(ok, z, np.nan)
    return vol


def _argmax_nan(vol: np.ndarray, axis: int = 0):
    """First index of the maximum along axis ignoring NaN; -1 if all NaN."""
    filled = np.where(np.isnan(vol), -np.inf, vol)
    idx = np.argmax(filled, axis=axis)
    none = np.all(np.isnan(vol), axis=axis)
    return np.where(none, -1, idx)


def block_match(rect_left: Raster, rect_right: Raster, cfg: DenseConfig | None = None) -> Raster:
    """Winner-take-all ZNCC disparity with left-right check.

    Candidates are integers d in [d_min, d_max] with D = u - u_R; ties go
    to the smaller d. Pixels failing the left-right consistency check, or
    without a defined correlation, are nodata. With subpixel on, a parabola
    through the three scores around the peak refines D by at most half a
    pixel; exact correlation peaks are kept at their integer value.
    """
    cfg = cfg or DenseConfig()
    if rect_left.shape != rect_right.shape:
        raise ValueError("rectified images must share their size")
    left = np.asarray(rect_left.band(0), dtype=float)
    right = np.asarray(rect_right.band(0), dtype=float)
    vol = zncc_volume(left, right, cfg.d_min, cfg.d_max, cfg.window)
    nd, h, w = vol.shape
    best = _argmax_nan(vol)

    # right-view winners: C_R(u_R, d) = C_L(u_R + d, d)
    vol_r = np.full_like(vol, np.nan)
    for k, d in enumerate(range(cfg.d_min, cfg.d_max + 1)):
        vol_r[k] = _shift(vol[k], -d)
    best_r = _argmax_nan(vol_r)

    rows, cols = np.nonzero(best >= 0)
    k = best[rows, cols]
    d_int = cfg.d_min + k
    ur = cols - d_int
    inside = (ur >= 0) & (ur < w)
    kr = np.full(k.shape, -1)
    kr[inside] = best_r[rows[inside], ur[inside]]
    consistent = inside & (kr >= 0) & (np.abs((cfg.d_min + kr) - d_int) <= cfg.lr_tol)
    rows, cols, k = rows[consistent], cols[consistent], k[consistent]

    disp = (cfg.d_min + k).astype(float)
    if cfg.subpixel and k.size:
        c0 = vol[k, rows, cols].astype(float)
        has = (k > 0) & (k < nd - 1)
        cm = np.full(k.shape, np.nan)
        cp = np.full(k.shape, np.nan)
        cm[has] = vol[k[has] - 1, rows[has], cols[has]]
        cp[has] = vol[k[has] + 1, rows[has], cols[has]]
        den = cm - 2 * c0 + cp
        with np.errstate(invalid="ignore", divide="ignore"):
            off = np.clip(0.5 * (cm - cp) / den, -0.5, 0.5)
        refine = has & np.isfinite(off) & (den < 0) & (c0 < PERFECT_ZNCC)
        disp[refine] += off[refine]

    out = np.full((h, w), np.nan, dtype=np.float32)
    out[rows, cols] = disp
    return Raster(out)


def load_disparity(path, negate: bool = False, strict_unipolar: bool = False) -> Raster:
    """Read an externally computed single-channel disparity map.

    Args:
        path: PFM or DSRAST file.
        negate: flip the sign, for tools using D = u_R - u.
        strict_unipolar: reject maps holding both positive and negative values.

    Returns:
        the map in the D = u - u_R convention, non-finite values as nodata.
    """
    r = read_raster(path)
    if r.channels != 1:
        raise ValueError(f"{path}: disparity maps have one channel, got {r.channels}")
    d = np.asarray(r.data, dtype=float)
    d = np.where(np.isfinite(d), d, np.nan)
    if negate:
        d = -d
    if strict_unipolar:
        if np.nanmax(d, initial=-np.inf) > 0 and np.nanmin(d, initial=np.inf) < 0:
            raise BipolarDisparityError(f"{path}: disparities of both signs")
    return Raster(d)
