"""Raster container, file formats and homography warping.

In memory every nodata sample is NaN. A finite sentinel declared by a file
is remembered in :attr:`Raster.nodata` and restored when writing, so the
DSRAST round trip is byte-exact.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    HeaderFieldMissing,
    IoError,
    RangeError,
    TruncatedFile,
    UnknownMagic,
)
from .homography import Homography

DSRAST_MAGIC = b"DSRAST01"
_HEADER_FIELDS = ("width", "height", "channels", "dtype", "nodata", "geotransform", "crs")
WARP_BLOCK_ROWS = 256


@dataclass(frozen=True)
class Raster:
    """A width x height grid of float32 samples.

    Attributes:
        data: (height, width) or (height, width, channels) float32 array;
            NaN marks nodata.
        nodata: sentinel written to disk in place of NaN (NaN by default).
        geotransform: optional GDAL-style [x0, dx, rxy, y0, ryx, dy] mapping
            continuous (col, row) pixel coordinates to ground (x, y).
        crs: optional opaque coordinate reference tag.
    """

    data: np.ndarray
    nodata: float = math.nan
    geotransform: tuple | None = None
    crs: str | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32)
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        if data.ndim not in (2, 3):
            raise ValueError("raster data must be 2-D or 3-D")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "nodata", float(np.float32(self.nodata)))
        if self.geotransform is not None:
            gt = tuple(float(v) for v in self.geotransform)
            if len(gt) != 6:
                raise ValueError("geotransform needs 6 numbers")
            if not (gt[1] > 0 and gt[5] != 0):
                raise ValueError("geotransform requires dx > 0 and dy != 0")
            object.__setattr__(self, "geotransform", gt)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def band(self, k: int = 0) -> np.ndarray:
        if self.data.ndim == 2:
            if k != 0:
                raise IndexError(k)
            return self.data
        return self.data[:, :, k]

    def valid_mask(self) -> np.ndarray:
        """True where no channel is nodata."""
        if self.data.ndim == 2:
            return ~np.isnan(self.data)
        return ~np.isnan(self.data).any(axis=2)

    def with_data(self, data) -> "Raster":
        """New raster with the same georeferencing and sentinel."""
        return replace(self, data=data)

    def cell_centers(self):
        """Ground (x, y) of every pixel center, each shaped (height, width)."""
        if self.geotransform is None:
            raise ValueError("raster has no geotransform")
        cols, rows = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        return pixel_to_ground(self.geotransform, cols, rows)


def pixel_to_ground(gt, col, row):
    x0, dx, rxy, y0, ryx, dy = gt
    return x0 + col * dx + row * rxy, y0 + col * ryx + row * dy


def ground_to_pixel(gt, x, y):
    """Continuous (col, row) of ground coordinates; pixel index is floor."""
    x0, dx, rxy, y0, ryx, dy = gt
    det = dx * dy - rxy * ryx
    xr = np.asarray(x) - x0
    yr = np.asarray(y) - y0
    return (dy * xr - rxy * yr) / det, (-ryx * xr + dx * yr) / det


# ---------------------------------------------------------------- formats

def _sniff(path: Path) -> str:
    with open(path, "rb") as f:
        head = f.read(8)
    if head.startswith(DSRAST_MAGIC):
        return "DSRAST"
    if head[:2] in (b"Pf", b"PF"):
        return "PFM"
    if head[:2] == b"P5":
        return "PGM"
    raise UnknownMagic(f"{path}: unrecognized magic {head[:8]!r}")


def read_raster(path) -> Raster:
    """Read a DSRAST, PFM or binary PGM file; the format is sniffed."""
    path = Path(path)
    try:
        fmt = _sniff(path)
        blob = path.read_bytes()
    except FileNotFoundError as e:
        raise IoError(str(e)) from e
    if fmt == "DSRAST":
        return _read_dsrast(blob, path)
    if fmt == "PFM":
        return _read_pfm(blob, path)
    return _read_pgm(blob, path)


def write_raster(r: Raster, path, format: str | None = None) -> None:
    """Write ``r`` as DSRAST, PFM or PGM.

    When ``format`` is omitted it is taken from the file suffix
    (.pfm, .pgm, anything else is DSRAST).
    """
    path = Path(path)
    if format is None:
        format = {".pfm": "PFM", ".pgm": "PGM"}.get(path.suffix.lower(), "DSRAST")
    format = format.upper()
    if format == "DSRAST":
        blob = _dsrast_bytes(r)
    elif format == "PFM":
        blob = _pfm_bytes(r)
    elif format == "PGM":
        blob = _pgm_bytes(r)
    else:
        raise ValueError(f"unknown raster format {format!r}")
    try:
        path.write_bytes(blob)
    except OSError as e:
        raise IoError(str(e)) from e


def _dsrast_bytes(r: Raster) -> bytes:
    header = {
        "width": r.width,
        "height": r.height,
        "channels": r.channels,
        "dtype": "f32",
        "nodata": None if math.isnan(r.nodata) else r.nodata,
        "geotransform": None if r.geotransform is None else list(r.geotransform),
        "crs": r.crs,
    }
    hb = json.dumps(header, separators=(",", ":")).encode("utf-8")
    data = np.asarray(r.data, dtype="<f4")
    if not math.isnan(r.nodata):
        data = np.where(np.isnan(data), np.float32(r.nodata), data).astype("<f4")
    return DSRAST_MAGIC + struct.pack("<I", len(hb)) + hb + data.tobytes()


def _read_dsrast(blob: bytes, path) -> Raster:
    if len(blob) < 12:
        raise TruncatedFile(f"{path}: header truncated")
    (n,) = struct.unpack("<I", blob[8:12])
    if len(blob) < 12 + n:
        raise TruncatedFile(f"{path}: header truncated")
    try:
        header = json.loads(blob[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise HeaderFieldMissing(f"{path}: unreadable header ({e})") from e
    for key in _HEADER_FIELDS:
        if key not in header:
            raise HeaderFieldMissing(f"{path}: header lacks {key!r}")
    if header["dtype"] != "f32":
        raise HeaderFieldMissing(f"{path}: unsupported dtype {header['dtype']!r}")
    w, h, c = int(header["width"]), int(header["height"]), int(header["channels"])
    count = w * h * c
    body = blob[12 + n:]
    if len(body) < 4 * count:
        raise TruncatedFile(f"{path}: expected {count} samples, found {len(body) // 4}")
    data = np.frombuffer(body, dtype="<f4", count=count).astype(np.float32)
    data = data.reshape((h, w) if c == 1 else (h, w, c))
    nodata = header["nodata"]
    if nodata is None:
        nodata = math.nan
    else:
        data = np.where(data == np.float32(nodata), np.float32(np.nan), data)
    return Raster(data, nodata=nodata, geotransform=header["geotransform"], crs=header["crs"])


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(blob: bytes, n: int, path, comments: bool):
    pos = 0
    tokens = []
    pattern = _TOKEN if comments else re.compile(rb"\s*(\S+)")
    for _ in range(n):
        m = pattern.match(blob, pos)
        if m is None:
            raise TruncatedFile(f"{path}: header truncated")
        tokens.append(m.group(1).decode("ascii", "replace"))
        pos = m.end()
    # exactly one whitespace byte separates the header from the samples
    return tokens, pos + 1


def _pfm_bytes(r: Raster) -> bytes:
    if r.channels not in (1, 3):
        raise ValueError("PFM holds 1 or 3 channels")
    magic = b"Pf" if r.channels == 1 else b"PF"
    header = magic + b"\n" + f"{r.width} {r.height}\n-1.0\n".encode("ascii")
    # PFM rows run bottom to top
    return header + np.ascontiguousarray(r.data[::-1], dtype="<f4").tobytes()


def _read_pfm(blob: bytes, path) -> Raster:
    (magic, ws, hs, ss), pos = _header_tokens(blob, 4, path, comments=False)
    c = 1 if magic == "Pf" else 3
    try:
        w, h, scale = int(ws), int(hs), float(ss)
    except ValueError as e:
        raise HeaderFieldMissing(f"{path}: bad PFM header") from e
    count = w * h * c
    body = blob[pos:]
    if len(body) < 4 * count:
        raise TruncatedFile(f"{path}: expected {count} samples")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(body, dtype=dtype, count=count).astype(np.float32)
    data = data.reshape((h, w) if c == 1 else (h, w, c))[::-1]
    return Raster(data)


def _pgm_bytes(r: Raster) -> bytes:
    if r.channels != 1:
        raise RangeError("PGM requires a single channel")
    d = np.asarray(r.data, dtype=float)
    if not np.all((d >= 0) & (d <= 255)):
        raise RangeError("PGM samples must lie in [0, 255]")
    header = f"P5\n{r.width} {r.height}\n255\n".encode("ascii")
    return header + np.rint(d).astype(np.uint8).tobytes()


def _read_pgm(blob: bytes, path) -> Raster:
    (_, ws, hs, ms), pos = _header_tokens(blob, 4, path, comments=True)
    try:
        w, h, maxval = int(ws), int(hs), int(ms)
    except ValueError as e:
        raise HeaderFieldMissing(f"{path}: bad PGM header") from e
    if maxval != 255:
        raise HeaderFieldMissing(f"{path}: only maxval 255 is supported")
    body = blob[pos:]
    if len(body) < w * h:
        raise TruncatedFile(f"{path}: expected {w * h} bytes")
    data = np.frombuffer(body, dtype=np.uint8, count=w * h).reshape(h, w)
    return Raster(data.astype(np.float32))


# ------------------------------------------------------------------- warp

def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a 2-D or 3-D array at (x, y).

    Positions outside [0, w-1] x [0, h-1] give NaN. The stencil only
    includes neighbours with nonzero weight, so integer positions return
    the sample itself; NaN anywhere in the stencil propagates.
    """
    h, w = img.shape[:2]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.where(inside, x, 0.0)
    yc = np.where(inside, y, 0.0)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    fx = xc - x0
    fy = yc - y0
    x1 = np.where(fx > 0, x0 + 1, x0)
    y1 = np.where(fy > 0, y0 + 1, y0)
    src = img.astype(float, copy=False)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    out = ((1 - fx) * (1 - fy) * src[y0, x0] + fx * (1 - fy) * src[y0, x1]
           + (1 - fx) * fy * src[y1, x0] + fx * fy * src[y1, x1])
    if img.ndim == 3:
        out[~inside] = np.nan
        out[np.isnan(out).any(axis=-1)] = np.nan
    else:
        out[~inside] = np.nan
    return out


def warp(src: Raster, H: Homography, out_w: int, out_h: int) -> Raster:
    """Resample ``src`` into an ``out_w`` x ``out_h`` frame through ``H``.

    out(u, v) = src(H^-1(u, v)) with bilinear interpolation. Samples that
    fall outside the source or touch nodata come out as nodata.
    """
    Hinv = H.inverse()
    out_shape = (out_h, out_w) if src.channels == 1 else (out_h, out_w, src.channels)
    out = np.empty(out_shape, dtype=np.float32)
    cols = np.arange(out_w, dtype=float)
    for r0 in range(0, out_h, WARP_BLOCK_ROWS):
        r1 = min(out_h, r0 + WARP_BLOCK_ROWS)
        u, v = np.meshgrid(cols, np.arange(r0, r1, dtype=float))
        x, y = Hinv(u, v)
        out[r0:r1] = bilinear_sample(src.data, x, y)
    return Raster(out, nodata=src.nodata)
