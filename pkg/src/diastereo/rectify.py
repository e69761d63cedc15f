"""Rectification of multi-date pairs into unipolar, altitude-increasing
stereo geometry.

The pipeline:

1. affine epipolar rectification from RPC virtual correspondences;
2. a row-preserving affine correction of the right image so that virtual
   matches at the average altitude have zero disparity;
3. a left/right swap if disparity would decrease with altitude;
4. warping, sparse matching on the rectified pair, and a final
   translation of the right image so the smallest match disparity is 0 and
   the median vertical offset vanishes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometry, EmptyMatchSet, MatchFailure
from .homography import Homography, fit_affine_row
from .raster import Raster, read_raster, warp, write_raster
from .rpc import RpcModel, localize, parse_rpc, project, write_rpc
from .sparse_match import MatchConfig, MatchSet, classic_match

log = logging.getLogger(__name__)


@dataclass
class RectifyConfig:
    grid_n: int = 7
    half_range: float = 40.0  # altitude span around z_avg when none is given, m
    dz: float = 10.0
    max_size: int = 8192
    min_matches: int = 4
    match: MatchConfig = field(default_factory=MatchConfig)


@dataclass
class RectificationResult:
    """Output of :func:`rectify_pair`.

    ``rpc_left``/``rpc_right`` and ``left_size`` describe the pair after the
    optional swap, i.e. the cameras that ``H_L`` and ``H_R`` apply to.
    """

    H_L: Homography
    H_R: Homography
    rect_left: Raster | None
    rect_right: Raster | None
    swapped: bool
    t: float
    s: float
    out_size: tuple[int, int]
    rpc_left: RpcModel
    rpc_right: RpcModel
    left_size: tuple[int, int]
    z_avg: float
    h_range: tuple[float, float]
    matches: MatchSet | None = None  # rectified-frame matches before the shift

    def cameras(self, rpc_l: RpcModel | None = None, rpc_r: RpcModel | None = None):
        """Rectified (left, right) cameras.

        Cameras given in the order originally passed to rectify_pair are
        reordered according to ``swapped``; omitted ones come from the result.
        """
        if rpc_l is None or rpc_r is None:
            return self.rpc_left, self.rpc_right
        return (rpc_r, rpc_l) if self.swapped else (rpc_l, rpc_r)

    def meta(self) -> dict:
        return {
            "swapped": self.swapped, "t": self.t, "s": self.s, "z_avg": self.z_avg,
            "out_size": list(self.out_size), "left_size": list(self.left_size),
            "h_range": list(self.h_range),
        }


def virtual_matches(rpc_l: RpcModel, rpc_r: RpcModel, roi, heights, grid_n: int = 7) -> np.ndarray:
    """Left grid pixels localized at each altitude and projected right.

    Args:
        roi: (x, y, w, h) rectangle in the left image.
        heights: altitudes in meters.

    Returns:
        (grid_n * grid_n * len(heights), 5) array of x_L, y_L, x_R, y_R, h.
    """
    x, y, w, h = roi
    if w <= 0 or h <= 0:
        raise ValueError("empty ROI")
    gx, gy = np.meshgrid(np.linspace(x, x + w - 1, grid_n), np.linspace(y, y + h - 1, grid_n))
    gx, gy = gx.ravel(), gy.ravel()
    out = []
    for z in heights:
        lon, lat = localize(rpc_l, gx, gy, z)
        xr, yr = project(rpc_r, lon, lat, np.full_like(gx, z))
        out.append(np.column_stack([gx, gy, xr, yr, np.full_like(gx, z)]))
    return np.vstack(out)


def affine_fundamental(m: np.ndarray) -> np.ndarray:
    """Total-least-squares affine epipolar constraint from matches.

    Returns (a, b, c, d, e) with a x_R + b y_R + c x_L + d y_L + e = 0,
    normalized to unit norm of (a, b, c, d).
    """
    pts = np.column_stack([m[:, 2], m[:, 3], m[:, 0], m[:, 1]])
    mu = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - mu, full_matrices=False)
    abcd = vt[-1]
    return np.append(abcd, -abcd @ mu)


def rpc_rectify(rpc_l: RpcModel, rpc_r: RpcModel, roi, h_range, grid_n: int = 7):
    """Rectifying similarities from RPC virtual correspondences.

    The affine epipolar constraint is fitted on a grid_n x grid_n x 3 grid
    of virtual matches. Each image is then rotated so its epipolar lines
    are horizontal and scaled by the square root of the ratio of the two
    epipolar gradients; the constant term is split evenly between both
    images, so exchanging the cameras exchanges the homographies.

    Returns:
        (H_L, H_R).
    """
    lo, hi = h_range
    if not hi > lo:
        raise ValueError("degenerate altitude range")
    m = virtual_matches(rpc_l, rpc_r, roi, (lo, (lo + hi) / 2, hi), grid_n)
    n = grid_n * grid_n
    parallax = np.hypot(m[2 * n:, 2] - m[:n, 2], m[2 * n:, 3] - m[:n, 3])
    if parallax.max() < 1e-3:
        raise DegenerateGeometry("no parallax between the cameras: epipolar direction undefined")
    a, b, c, d, e = affine_fundamental(m)
    n1 = -np.array([c, d])
    n2 = np.array([a, b])
    if n1[1] < 0 or (n1[1] == 0 and n1[0] < 0):
        n1, n2, e = -n1, -n2, -e
    r1, r2 = np.hypot(*n1), np.hypot(*n2)
    if r1 == 0 or r2 == 0:
        raise DegenerateGeometry("epipolar direction undefined")
    sigma = math.sqrt(r1 * r2)
    u1, u2 = n1 / r1, n2 / r2
    s1, s2 = r1 / sigma, r2 / sigma
    H_L = Homography([[s1 * u1[1], -s1 * u1[0], 0.0], [s1 * u1[0], s1 * u1[1], -e / (2 * sigma)], [0, 0, 1]])
    H_R = Homography([[s2 * u2[1], -s2 * u2[0], 0.0], [s2 * u2[0], s2 * u2[1], e / (2 * sigma)], [0, 0, 1]])
    return H_L, H_R


def vertical_residuals(H_L: Homography, H_R: Homography, m: np.ndarray) -> np.ndarray:
    """v_L - v_R of virtual matches under the given homographies."""
    _, vl = H_L(m[:, 0], m[:, 1])
    _, vr = H_R(m[:, 2], m[:, 3])
    return vl - vr


def reduce_disp_range(H_L: Homography, H_R: Homography, rpc_l: RpcModel, rpc_r: RpcModel,
                      z_avg: float, roi=None, grid_n: int = 7) -> Homography:
    """Row-preserving affine correction of H_R cancelling disparity at z_avg.

    Fits x_L' ~ a x_R' + b y_R' + c on rectified virtual matches at z_avg
    and returns [[a, b, c], [0, 1, 0], [0, 0, 1]] @ H_R.
    """
    if roi is None:
        roi = (rpc_l.samp_off - rpc_l.samp_scale, rpc_l.line_off - rpc_l.line_scale,
               2 * rpc_l.samp_scale, 2 * rpc_l.line_scale)
    m = virtual_matches(rpc_l, rpc_r, roi, (z_avg,), grid_n)
    xl, _ = H_L(m[:, 0], m[:, 1])
    xr, yr = H_R(m[:, 2], m[:, 3])
    a, b, c = fit_affine_row(np.column_stack([xr, yr]), xl)
    S = Homography([[a, b, c], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return S @ H_R


def rectified_disparity(H_L, H_R, rpc_l, rpc_r, point, z) -> float:
    """u_L - u_R of the virtual match of left pixel ``point`` at altitude z."""
    lon, lat = localize(rpc_l, point[0], point[1], z)
    xr, yr = project(rpc_r, lon, lat, z)
    ul, _ = H_L(point[0], point[1])
    ur, _ = H_R(xr, yr)
    return ul - ur


def disparity_decreases_with_altitude(H_R: Homography, H_L: Homography, rpc_r: RpcModel,
                                      rpc_l: RpcModel, z_avg: float, center=None,
                                      dz: float = 10.0) -> bool:
    """True iff d(z_avg + dz) < d(z_avg) at the ROI center.

    ``center`` is a left-image pixel; it defaults to the left camera's
    image normalization center.
    """
    if center is None:
        center = (rpc_l.samp_off, rpc_l.line_off)
    d0 = rectified_disparity(H_L, H_R, rpc_l, rpc_r, center, z_avg)
    d1 = rectified_disparity(H_L, H_R, rpc_l, rpc_r, center, z_avg + dz)
    return d1 < d0


def enforce_polarity(H_R: Homography, M) -> tuple[Homography, float, float]:
    """Shift the right image so match disparities are >= 0 with minimum 0
    and the median vertical offset is 0.

    Args:
        H_R: current right homography.
        M: MatchSet (or (N, 4) array) in the current rectified frames.

    Returns:
        ([[1, 0, t], [0, 1, s], [0, 0, 1]] @ H_R, t, s).
    """
    m = M.matches if isinstance(M, MatchSet) else np.asarray(M, dtype=float)
    if len(m) == 0:
        raise EmptyMatchSet("no matches to enforce polarity")
    t = float(np.min(m[:, 0] - m[:, 2]))
    s = float(np.median(m[:, 1] - m[:, 3]))
    return Homography.translation(t, s) @ H_R, t, s


def output_frame(H_L: Homography, size, max_size: int = 8192):
    """Translation placing the warped left image at the origin, and the
    resulting (width, height)."""
    w, h = size
    cx = np.array([0, w - 1, 0, w - 1], dtype=float)
    cy = np.array([0, 0, h - 1, h - 1], dtype=float)
    x, y = H_L(cx, cy)
    x0, y0 = math.floor(x.min()), math.floor(y.min())
    ow = min(max_size, math.ceil(x.max()) - x0 + 1)
    oh = min(max_size, math.ceil(y.max()) - y0 + 1)
    return Homography.translation(-x0, -y0), (ow, oh)


def _to_rectified(M: MatchSet, H_L: Homography, H_R: Homography) -> MatchSet:
    ul, vl = H_L(M.left[:, 0], M.left[:, 1])
    ur, vr = H_R(M.right[:, 0], M.right[:, 1])
    return MatchSet(np.column_stack([ul, vl, ur, vr, M.scores]), M.source)


def rectify_pair(left: Raster, rpc_l: RpcModel, right: Raster, rpc_r: RpcModel, z_avg: float,
                 matches: MatchSet | str = "auto", cfg: RectifyConfig | None = None,
                 h_range=None) -> RectificationResult:
    """Rectify a (possibly multi-date) pair.

    Args:
        left, right: single-channel images.
        rpc_l, rpc_r: their cameras.
        z_avg: average scene altitude, meters.
        matches: "auto" to match the intermediate rectified pair with
            :func:`classic_match`, or a MatchSet of correspondences given in
            the ORIGINAL image coordinates of (left, right).
        h_range: altitude span for the virtual grid; defaults to
            z_avg -/+ cfg.half_range.

    Returns:
        a RectificationResult.
    """
    cfg = cfg or RectifyConfig()
    if h_range is None:
        h_range = (z_avg - cfg.half_range, z_avg + cfg.half_range)
    h_range = (float(h_range[0]), float(h_range[1]))
    roi = (0, 0, left.width, left.height)
    H_L, H_R = rpc_rectify(rpc_l, rpc_r, roi, h_range, cfg.grid_n)
    H_R = reduce_disp_range(H_L, H_R, rpc_l, rpc_r, z_avg, roi, cfg.grid_n)
    center = ((left.width - 1) / 2, (left.height - 1) / 2)
    swapped = disparity_decreases_with_altitude(H_R, H_L, rpc_r, rpc_l, z_avg, center, cfg.dz)
    if swapped:
        left, right = right, left
        rpc_l, rpc_r = rpc_r, rpc_l
        H_L, H_R = H_R, H_L
        if isinstance(matches, MatchSet):
            matches = matches.swapped()
        log.info("disparity decreases with altitude: swapping left and right")

    T, out_size = output_frame(H_L, (left.width, left.height), cfg.max_size)
    H_L, H_R = T @ H_L, T @ H_R
    rect_left = warp(left, H_L, *out_size)
    rect_right = warp(right, H_R, *out_size)

    if isinstance(matches, str):
        if matches != "auto":
            raise ValueError("matches must be 'auto' or a MatchSet")
        rect_matches = classic_match(rect_left, rect_right, cfg.match)
        if len(rect_matches) < cfg.min_matches:
            raise MatchFailure(f"only {len(rect_matches)} matches on the rectified pair (need {cfg.min_matches})")
    else:
        if len(matches) == 0:
            raise EmptyMatchSet("no matches supplied")
        rect_matches = _to_rectified(matches, H_L, H_R)

    H_R, t, s = enforce_polarity(H_R, rect_matches)
    rect_right = warp(right, H_R, *out_size)
    log.info("polarity shift t=%.3f px, vertical correction s=%.3f px", t, s)
    return RectificationResult(
        H_L=H_L, H_R=H_R, rect_left=rect_left, rect_right=rect_right, swapped=swapped,
        t=t, s=s, out_size=out_size, rpc_left=rpc_l, rpc_right=rpc_r,
        left_size=(left.width, left.height), z_avg=float(z_avg), h_range=h_range,
        matches=rect_matches,
    )


RECT_FILES = ("rect_left.dsrast", "rect_right.dsrast", "H_L.json", "H_R.json", "meta.json",
              "rpc_left.json", "rpc_right.json")


def save_rectification(res: RectificationResult, out_dir) -> list[Path]:
    """Write a RectificationResult as a directory; returns the written paths.

    The stored cameras are those of the rectified pair (after any swap).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / name for name in RECT_FILES]
    write_raster(res.rect_left, paths[0])
    write_raster(res.rect_right, paths[1])
    paths[2].write_text(json.dumps(res.H_L.to_list()))
    paths[3].write_text(json.dumps(res.H_R.to_list()))
    paths[4].write_text(json.dumps(res.meta(), indent=1))
    write_rpc(res.rpc_left, paths[5])
    write_rpc(res.rpc_right, paths[6])
    return paths


def load_rectification(rect_dir, images: bool = True) -> RectificationResult:
    d = Path(rect_dir)
    meta = json.loads((d / "meta.json").read_text())
    return RectificationResult(
        H_L=Homography.from_list(json.loads((d / "H_L.json").read_text())),
        H_R=Homography.from_list(json.loads((d / "H_R.json").read_text())),
        rect_left=read_raster(d / "rect_left.dsrast") if images else None,
        rect_right=read_raster(d / "rect_right.dsrast") if images else None,
        swapped=bool(meta["swapped"]), t=float(meta["t"]), s=float(meta["s"]),
        out_size=tuple(meta["out_size"]), rpc_left=parse_rpc(d / "rpc_left.json"),
        rpc_right=parse_rpc(d / "rpc_right.json"), left_size=tuple(meta["left_size"]),
        z_avg=float(meta["z_avg"]), h_range=tuple(meta["h_range"]),
    )
