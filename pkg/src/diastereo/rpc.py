"""Rational polynomial (RPC) camera models.

Coefficients follow the RPC00B monomial order::

    1, L, P, H, LP, LH, PH, L^2, P^2, H^2,
    LPH, L^3, LP^2, LH^2, L^2P, P^3, PH^2, L^2H, P^2H, H^3

where L, P, H are the normalized longitude, latitude and height.
Altitudes are in whatever datum the accompanying DSM uses; cameras and
DSMs must agree on it.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import (
    DenominatorNearZero,
    DomainWarning,
    IoError,
    MalformedNumber,
    MissingCoefficient,
    NoConvergence,
    SingularJacobian,
)

DEN_EPS = 1e-10
DOMAIN_LIMIT = 2.0
LOCALIZE_TOL_PX = 1e-4
LOCALIZE_MAX_ITER = 100
FD_STEP = 1e-8
# iterate to half the tolerance so the degree conversion cannot push a point past it
TOL_SAFETY = 0.5

_OFFSETS = ("line_off", "samp_off", "lat_off", "lon_off", "height_off")
_SCALES = ("line_scale", "samp_scale", "lat_scale", "lon_scale", "height_scale")
_POLYS = ("line_num", "line_den", "samp_num", "samp_den")

# RPC00B keyword spellings
_TEXT_KEYS = {
    "LINE_OFF": "line_off", "SAMP_OFF": "samp_off", "LAT_OFF": "lat_off",
    "LONG_OFF": "lon_off", "LON_OFF": "lon_off", "HEIGHT_OFF": "height_off",
    "LINE_SCALE": "line_scale", "SAMP_SCALE": "samp_scale", "LAT_SCALE": "lat_scale",
    "LONG_SCALE": "lon_scale", "LON_SCALE": "lon_scale", "HEIGHT_SCALE": "height_scale",
}
_TEXT_POLYS = {
    "LINE_NUM_COEFF": "line_num", "LINE_DEN_COEFF": "line_den",
    "SAMP_NUM_COEFF": "samp_num", "SAMP_DEN_COEFF": "samp_den",
}


def monomials(L, P, H) -> np.ndarray:
    """The 20 RPC00B basis terms, stacked along the first axis."""
    L = np.asarray(L, dtype=float)
    P = np.asarray(P, dtype=float)
    H = np.asarray(H, dtype=float)
    one = np.ones_like(L + P + H)
    return np.stack([
        one, L, P, H, L * P, L * H, P * H, L * L, P * P, H * H,
        L * P * H, L * L * L, L * P * P, L * H * H, L * L * P,
        P * P * P, P * H * H, L * L * H, P * P * H, H * H * H,
    ])


def _coeffs(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).ravel()
    if arr.shape != (20,):
        raise ValueError(f"{name} needs 20 coefficients, got {arr.size}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RpcModel:
    """RPC camera: ground (lon, lat, h) to image (col, row)."""

    line_off: float
    samp_off: float
    line_scale: float
    samp_scale: float
    lat_off: float
    lon_off: float
    lat_scale: float
    lon_scale: float
    height_off: float
    height_scale: float
    line_num: np.ndarray = field(repr=False)
    line_den: np.ndarray = field(repr=False)
    samp_num: np.ndarray = field(repr=False)
    samp_den: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in _OFFSETS + _SCALES:
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in _SCALES:
            if getattr(self, name) == 0:
                raise ValueError(f"{name} must be nonzero")
        for name in _POLYS:
            object.__setattr__(self, name, _coeffs(getattr(self, name), name))
        for name in ("line_den", "samp_den"):
            if abs(getattr(self, name)[0]) <= 1e-12:
                raise ValueError(f"{name} constant term must be nonzero")

    # convenience methods mirroring the module functions
    def projection(self, lon, lat, h):
        return project(self, lon, lat, h)

    def localization(self, col, row, h, **kw):
        return localize(self, col, row, h, **kw)

    def normalize(self, lon, lat, h):
        return ((np.asarray(lon, dtype=float) - self.lon_off) / self.lon_scale,
                (np.asarray(lat, dtype=float) - self.lat_off) / self.lat_scale,
                (np.asarray(h, dtype=float) - self.height_off) / self.height_scale)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = [float(c) for c in v] if f.name in _POLYS else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RpcModel":
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                raise MissingCoefficient(f.name)
            v = d[f.name]
            try:
                if f.name in _POLYS:
                    if len(v) != 20:
                        raise MissingCoefficient(f"{f.name}[{len(v)}:20]")
                    kw[f.name] = [float(c) for c in v]
                else:
                    kw[f.name] = float(v)
            except (TypeError, ValueError) as e:
                raise MalformedNumber(f"{f.name}: {v!r}") from e
        return cls(**kw)


def _normalized_projection(cam: RpcModel, L, P, H):
    """Normalized -> pixel; returns (col, row)."""
    m = monomials(L, P, H)
    ld = np.tensordot(cam.line_den, m, axes=1)
    sd = np.tensordot(cam.samp_den, m, axes=1)
    if np.any(np.abs(ld) < DEN_EPS) or np.any(np.abs(sd) < DEN_EPS):
        raise DenominatorNearZero("RPC denominator vanishes")
    row = cam.line_off + cam.line_scale * np.tensordot(cam.line_num, m, axes=1) / ld
    col = cam.samp_off + cam.samp_scale * np.tensordot(cam.samp_num, m, axes=1) / sd
    return col, row


def project(cam: RpcModel, lon, lat, h):
    """Project ground points into the image.

    Args:
        cam: the camera.
        lon, lat: degrees. h: meters. Scalars or arrays of equal shape.

    Returns:
        (col, row) pixel coordinates. A DomainWarning is emitted when a
        normalized coordinate exceeds 2 in magnitude.
    """
    L, P, H = np.broadcast_arrays(*cam.normalize(lon, lat, h))
    if max(np.max(np.abs(L)), np.max(np.abs(P)), np.max(np.abs(H))) > DOMAIN_LIMIT:
        warnings.warn("ground point outside the RPC normalization domain", DomainWarning, stacklevel=2)
    col, row = _normalized_projection(cam, L, P, H)
    if np.ndim(col) == 0:
        return float(col), float(row)
    return col, row


def localize(cam: RpcModel, col, row, h, *, guess=None, tol: float = LOCALIZE_TOL_PX,
             max_iter: int = LOCALIZE_MAX_ITER, strict: bool = True,
             return_iterations: bool = False):
    """Invert the camera at a fixed altitude.

    Damped Newton on the normalized (lon, lat) pair with a central
    finite-difference Jacobian. Vectorized: every point iterates until its
    own residual drops below half of ``tol`` pixels, so that the returned
    coordinates reproject within ``tol``.

    Args:
        cam: the camera.
        col, row: pixel coordinates.
        h: altitude in meters (broadcast against col/row).
        guess: optional (lon, lat) starting point; defaults to the
            normalization center.
        strict: raise on failure; otherwise failed points come back NaN.
        return_iterations: also return the largest Newton iteration count.

    Returns:
        (lon, lat) in degrees, plus the iteration count when requested.

    Raises:
        NoConvergence: some point still misses after ``max_iter`` steps.
        SingularJacobian: the 2x2 Jacobian is singular at some point.
    """
    col, row, h = np.broadcast_arrays(np.asarray(col, float), np.asarray(row, float), np.asarray(h, float))
    scalar = col.ndim == 0
    shape = col.shape
    col, row, h = col.ravel(), row.ravel(), h.ravel()
    H = (h - cam.height_off) / cam.height_scale
    if guess is None:
        L = np.zeros_like(col)
        P = np.zeros_like(col)
    else:
        L = np.broadcast_to((np.asarray(guess[0], float) - cam.lon_off) / cam.lon_scale, shape).ravel().copy()
        P = np.broadcast_to((np.asarray(guess[1], float) - cam.lat_off) / cam.lat_scale, shape).ravel().copy()

    def residual(idx, Lx, Px):
        c, r = _normalized_projection(cam, Lx, Px, H[idx])
        return c - col[idx], r - row[idx]

    active = np.flatnonzero(np.isfinite(col) & np.isfinite(row) & np.isfinite(H))
    L[np.setdiff1d(np.arange(col.size), active)] = np.nan
    rc = np.full(col.size, np.nan)
    rr = np.full(col.size, np.nan)
    rc[active], rr[active] = residual(active, L[active], P[active])
    err = np.hypot(rc, rr)
    iterations = 0
    while True:
        active = active[~(err[active] < TOL_SAFETY * tol)]
        if active.size == 0:
            break
        if iterations >= max_iter:
            if strict:
                raise NoConvergence(f"localization did not converge for {active.size} point(s)")
            L[active] = np.nan
            break
        iterations += 1
        La, Pa, Ha = L[active], P[active], H[active]
        cl1, rl1 = _normalized_projection(cam, La + FD_STEP, Pa, Ha)
        cl0, rl0 = _normalized_projection(cam, La - FD_STEP, Pa, Ha)
        cp1, rp1 = _normalized_projection(cam, La, Pa + FD_STEP, Ha)
        cp0, rp0 = _normalized_projection(cam, La, Pa - FD_STEP, Ha)
        j11 = (cl1 - cl0) / (2 * FD_STEP)
        j12 = (cp1 - cp0) / (2 * FD_STEP)
        j21 = (rl1 - rl0) / (2 * FD_STEP)
        j22 = (rp1 - rp0) / (2 * FD_STEP)
        det = j11 * j22 - j12 * j21
        jscale = np.maximum(np.abs(j11 * j22), np.abs(j12 * j21))
        singular = ~(np.abs(det) > 1e-12 * jscale) | (jscale == 0)
        if singular.any():
            if strict:
                raise SingularJacobian("RPC Jacobian is singular in (lon, lat)")
            L[active[singular]] = np.nan
            keep = ~singular
            active, La, Pa = active[keep], La[keep], Pa[keep]
            j11, j12, j21, j22, det = j11[keep], j12[keep], j21[keep], j22[keep], det[keep]
            if active.size == 0:
                continue
        ec, er = rc[active], rr[active]
        dL = -(j22 * ec - j12 * er) / det
        dP = -(-j21 * ec + j11 * er) / det
        # halve the step while the residual grows
        step = np.ones_like(dL)
        e0 = err[active]
        for _ in range(7):
            nc, nr = residual(active, La + step * dL, Pa + step * dP)
            ne = np.hypot(nc, nr)
            worse = ~(ne <= e0)
            if not worse.any():
                break
            step = np.where(worse, step / 2, step)
        else:
            nc, nr = residual(active, La + step * dL, Pa + step * dP)
            ne = np.hypot(nc, nr)
        L[active] = La + step * dL
        P[active] = Pa + step * dP
        rc[active], rr[active], err[active] = nc, nr, ne
    P[np.isnan(L)] = np.nan
    lon = cam.lon_off + cam.lon_scale * L
    lat = cam.lat_off + cam.lat_scale * P
    if scalar:
        out = (float(lon[0]), float(lat[0]))
    else:
        out = (lon.reshape(shape), lat.reshape(shape))
    return (*out, iterations) if return_iterations else out


# ---------------------------------------------------------------- parsing

def parse_rpc(path) -> RpcModel:
    """Read an RPC from a JSON sidecar or RPC00B keyword text file."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as e:
        raise MissingCoefficient(f"<file {path}>") from e
    except OSError as e:
        raise IoError(str(e)) from e
    if text.lstrip().startswith("{"):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise MalformedNumber(f"{path}: {e}") from e
        return RpcModel.from_dict(d)
    return parse_rpc_text(text)


_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _parse_number(key: str, raw: str) -> float:
    token = raw.strip().split()
    if not token or not _NUMBER.match(token[0]):
        raise MalformedNumber(f"{key}: {raw.strip()!r}")
    return float(token[0])  # unit suffix (pixels, degrees, meters) dropped


def parse_rpc_text(text: str) -> RpcModel:
    d: dict = {}
    polys = {name: [None] * 20 for name in _POLYS}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, raw = line.split(":", 1)
        key = key.strip().upper()
        if key in _TEXT_KEYS:
            d[_TEXT_KEYS[key]] = _parse_number(key, raw)
            continue
        m = re.match(r"^([A-Z_]+_COEFF)_(\d+)$", key)
        if m and m.group(1) in _TEXT_POLYS:
            k = int(m.group(2))
            if 1 <= k <= 20:
                polys[_TEXT_POLYS[m.group(1)]][k - 1] = _parse_number(key, raw)
    for name, vals in polys.items():
        for k, v in enumerate(vals):
            if v is None:
                prefix = [t for t, n in _TEXT_POLYS.items() if n == name][0]
                raise MissingCoefficient(f"{prefix}_{k + 1}")
        d[name] = vals
    for name in _OFFSETS + _SCALES:
        if name not in d:
            raise MissingCoefficient(name.upper())
    return RpcModel.from_dict(d)


def write_rpc(cam: RpcModel, path) -> None:
    Path(path).write_text(json.dumps(cam.to_dict(), indent=1))
