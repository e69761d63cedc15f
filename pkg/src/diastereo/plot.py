"""Colormapped renderings of single-channel rasters as PGM/PPM files."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib import colormaps

from .raster import Raster


def auto_range(values: np.ndarray) -> tuple[float, float]:
    """2nd and 98th percentiles of the finite values."""
    v = values[np.isfinite(values)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = np.percentile(v, [2, 98])
    return float(lo), float(hi)


def _levels(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Values mapped linearly to 0..255; a zero-width range maps to 128."""
    if hi > lo:
        t = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
        return np.rint(np.nan_to_num(t) * 255).astype(np.uint8)
    return np.full(values.shape, 128, dtype=np.uint8)


def colorize(raster: Raster, colormap: str = "gray", vrange=None) -> np.ndarray:
    """uint8 image: (h, w) for gray, (h, w, 3) for turbo; nodata is black.

    Args:
        vrange: (lo, hi), or None/"auto" for the 2-98 percentile range.
    """
    if raster.channels != 1:
        raise ValueError("plot needs a single-channel raster")
    values = np.asarray(raster.data, dtype=float)
    lo, hi = auto_range(values) if vrange is None or vrange == "auto" else map(float, vrange)
    levels = _levels(values, lo, hi)
    nodata = ~np.isfinite(values)
    if colormap == "gray":
        levels[nodata] = 0
        return levels
    if colormap == "turbo":
        table = np.rint(colormaps["turbo"](np.arange(256))[:, :3] * 255).astype(np.uint8)
        rgb = table[levels]
        rgb[nodata] = 0
        return rgb
    raise ValueError(f"unknown colormap {colormap!r}")


def plot(raster: Raster, path, colormap: str = "gray", vrange=None) -> None:
    """Write a binary PGM (gray) or PPM (turbo) rendering of ``raster``."""
    img = colorize(raster, colormap, vrange)
    h, w = img.shape[:2]
    magic = b"P5" if img.ndim == 2 else b"P6"
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + img.tobytes())
