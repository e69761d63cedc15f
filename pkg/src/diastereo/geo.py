"""Local metric coordinates about a reference longitude/latitude.

Ground rasters (DSMs, vegetation masks) carry a ``crs`` tag of the form
``"equirect:<lon0>,<lat0>"``: their geotransform is expressed in meters
east/north of that origin using the local equirectangular approximation.
This is adequate for tiles up to a couple of kilometers.
"""

from __future__ import annotations

import math

import numpy as np

METERS_PER_DEGREE = 111320.0
CRS_PREFIX = "equirect:"


def equirect_crs(lon0: float, lat0: float) -> str:
    return f"{CRS_PREFIX}{lon0!r},{lat0!r}"


def parse_crs(crs: str | None) -> tuple[float, float] | None:
    """Return the (lon0, lat0) origin encoded in a crs tag, or None."""
    if not crs or not crs.startswith(CRS_PREFIX):
        return None
    lon0, lat0 = crs[len(CRS_PREFIX):].split(",")
    return float(lon0), float(lat0)


def meters_per_degree(lat0: float) -> tuple[float, float]:
    return METERS_PER_DEGREE * math.cos(math.radians(lat0)), METERS_PER_DEGREE


def lonlat_to_local(lon, lat, origin):
    lon0, lat0 = origin
    mx, my = meters_per_degree(lat0)
    return (np.asarray(lon) - lon0) * mx, (np.asarray(lat) - lat0) * my


def local_to_lonlat(x, y, origin):
    lon0, lat0 = origin
    mx, my = meters_per_degree(lat0)
    return lon0 + np.asarray(x) / mx, lat0 + np.asarray(y) / my
