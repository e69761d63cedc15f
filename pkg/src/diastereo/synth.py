"""Synthetic scenes with known geometry: DSMs, affine RPC cameras and
ray-marched renderings.

The cameras are affine (linear RPC numerators, unit denominators): a
ground point at height ``h`` is seen where the ground point displaced by
``(h - h0) * tan(off_nadir)`` along the look azimuth would be seen at the
reference height ``h0``. That keeps every geometric property the pipeline
relies on while allowing closed-form checks. A ``cubic`` magnitude adds
small random higher-order terms to exercise the iterative solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geo import equirect_crs, lonlat_to_local, local_to_lonlat, meters_per_degree
from .raster import Raster, bilinear_sample, ground_to_pixel
from .rpc import RpcModel, localize, project


@dataclass
class ViewSpec:
    """One satellite view.

    Attributes:
        azimuth: look azimuth in degrees, clockwise from north.
        off_nadir: degrees, < 45.
        altitude_km: platform altitude (metadata only for affine cameras).
        gsd: ground sample distance in meters/pixel.
        kappa: in-plane image rotation in degrees.
        cubic: magnitude of random higher-order RPC terms (0 = exact affine).
        seed: seed for the cubic perturbation.
    """

    azimuth: float = 90.0
    off_nadir: float = 0.0
    altitude_km: float = 617.0
    gsd: float = 0.5
    kappa: float = 0.0
    cubic: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.off_nadir < 45:
            raise ValueError("off_nadir must lie in [0, 45)")
        if self.gsd <= 0:
            raise ValueError("gsd must be positive")


@dataclass
class Box:
    x: float  # center easting, m
    y: float  # center northing, m
    w: float  # east-west size, m
    l: float  # north-south size, m
    height: float


@dataclass
class SceneSpec:
    extent: tuple[float, float] = (256.0, 256.0)
    cell: float = 0.5
    terrain: str = "flat"  # flat | ramp | boxes
    h0: float = 100.0
    gx: float = 0.0
    gy: float = 0.0
    boxes: list[Box] = field(default_factory=list)
    texture_seed: int = 0
    season_decorrelation: float = 0.0
    cameras: list[ViewSpec] = field(default_factory=lambda: [ViewSpec(60.0, 10.0), ViewSpec(110.0, 20.0)])
    lon0: float = -95.93
    lat0: float = 41.26

    def __post_init__(self):
        if self.cell <= 0:
            raise ValueError("cell must be positive")
        if not 0 <= self.season_decorrelation <= 1:
            raise ValueError("season_decorrelation must lie in [0, 1]")
        self.boxes = [b if isinstance(b, Box) else Box(*b) for b in self.boxes]
        self.cameras = [v if isinstance(v, ViewSpec) else ViewSpec(**v) for v in self.cameras]

    @property
    def origin(self) -> tuple[float, float]:
        return self.lon0, self.lat0

    @property
    def crs(self) -> str:
        return equirect_crs(self.lon0, self.lat0)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "boxes" in d:
            d["boxes"] = [Box(**b) if isinstance(b, dict) else Box(*b) for b in d["boxes"]]
        if "extent" in d:
            d["extent"] = tuple(d["extent"])
        return cls(**d)


@dataclass
class Scene:
    spec: SceneSpec
    dsm: Raster
    textures: list[Raster]


def box_scene(seed: int = 0, n_boxes: int = 10, hmin: float = 5.0, hmax: float = 30.0,
              **kw) -> SceneSpec:
    """A box-city SceneSpec with non-overlapping boxes of random heights."""
    rng = np.random.default_rng(seed)
    spec = SceneSpec(terrain="boxes", **kw)
    ex, ey = spec.extent
    boxes: list[Box] = []
    tries = 0
    while len(boxes) < n_boxes and tries < 10000:
        tries += 1
        w, l = rng.uniform(12, 36, size=2)
        x = rng.uniform(-ex / 2 + 40 + w / 2, ex / 2 - 40 - w / 2)
        y = rng.uniform(-ey / 2 + 40 + l / 2, ey / 2 - 40 - l / 2)
        if any(abs(x - b.x) < (w + b.w) / 2 + 12 and abs(y - b.y) < (l + b.l) / 2 + 12 for b in boxes):
            continue
        h = hmin + (hmax - hmin) * len(boxes) / max(1, n_boxes - 1)
        boxes.append(Box(*(round(float(v), 1) for v in (x, y, w, l, h))))
    spec.boxes = boxes
    return spec


def _dsm_values(spec: SceneSpec) -> tuple[np.ndarray, tuple]:
    ex, ey = spec.extent
    nx = int(round(ex / spec.cell))
    ny = int(round(ey / spec.cell))
    gt = (-ex / 2, spec.cell, 0.0, ey / 2, 0.0, -spec.cell)
    xs = -ex / 2 + (np.arange(nx) + 0.5) * spec.cell
    ys = ey / 2 - (np.arange(ny) + 0.5) * spec.cell
    x, y = np.meshgrid(xs, ys)
    if spec.terrain == "flat":
        z = np.full(x.shape, spec.h0)
    elif spec.terrain == "ramp":
        z = spec.h0 + spec.gx * x + spec.gy * y
    elif spec.terrain == "boxes":
        z = np.full(x.shape, spec.h0)
        for b in spec.boxes:
            inside = (np.abs(x - b.x) <= b.w / 2) & (np.abs(y - b.y) <= b.l / 2)
            z = np.where(inside, np.maximum(z, spec.h0 + b.height), z)
    else:
        raise ValueError(f"unknown terrain {spec.terrain!r}")
    return z, gt


def _noise(shape, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    fine = ndimage.gaussian_filter(rng.standard_normal(shape), 1.5)
    coarse = ndimage.gaussian_filter(rng.standard_normal(shape), 6.0)
    t = fine / fine.std() + 0.5 * coarse / coarse.std()
    return np.clip(128 + 40 * t / t.std(), 0, 255)


def make_scene(spec: SceneSpec) -> Scene:
    """Build the DSM and one ground texture per camera.

    With ``season_decorrelation = f`` each camera's texture has a fraction
    ``f`` of its area (smooth random regions) replaced by independent
    noise; f = 0 gives identical textures, f = 1 fully independent ones.
    """
    z, gt = _dsm_values(spec)
    dsm = Raster(z, geotransform=gt, crs=spec.crs)
    base = _noise(z.shape, spec.texture_seed)
    f = spec.season_decorrelation
    textures = []
    for k in range(len(spec.cameras)):
        tex = base
        if f > 0:
            other = _noise(z.shape, spec.texture_seed + 7919 * (k + 1))
            if f >= 1:
                tex = other
            else:
                rng = np.random.default_rng(spec.texture_seed + 104729 * (k + 1))
                field_ = ndimage.gaussian_filter(rng.standard_normal(z.shape), 8.0)
                region = field_ <= np.quantile(field_, f)
                tex = np.where(region, other, base)
        textures.append(Raster(tex, geotransform=gt, crs=spec.crs))
    return Scene(spec, dsm, textures)


def _height_range(spec: SceneSpec) -> tuple[float, float]:
    z, _ = _dsm_values(spec)
    return float(z.min()), float(z.max())


def view_frame(view: ViewSpec, spec: SceneSpec, margin: int = 4) -> tuple[int, int]:
    """Image (width, height) that covers the whole scene for ``view``."""
    ex, ey = spec.extent
    lo, hi = _height_range(spec)
    cam = make_rpc(view, (spec.lon0, spec.lat0, spec.h0), image_size=(1, 1), half_extent=(ex / 2, ey / 2))
    xs = np.array([-ex / 2, ex / 2, -ex / 2, ex / 2] * 2)
    ys = np.array([-ey / 2, -ey / 2, ey / 2, ey / 2] * 2)
    hs = np.array([lo] * 4 + [hi] * 4)
    lon, lat = local_to_lonlat(xs, ys, spec.origin)
    col, row = project(cam, lon, lat, hs)
    half_w = np.max(np.abs(col - cam.samp_off))
    half_h = np.max(np.abs(row - cam.line_off))
    return 2 * (int(math.ceil(half_w)) + margin) + 1, 2 * (int(math.ceil(half_h)) + margin) + 1


def make_rpc(view: ViewSpec, scene_center, image_size=(1024, 1024), half_extent=(128.0, 128.0),
             height_scale: float = 100.0) -> RpcModel:
    """Affine RPC for ``view`` looking at ``scene_center`` = (lon, lat, h).

    The scene center at its height projects to the image center
    ((w - 1) / 2, (h - 1) / 2); pixel centers sit at integer coordinates.
    """
    lon0, lat0, h0 = scene_center
    w, h = image_size
    mx, my = meters_per_degree(lat0)
    lon_scale = 1.5 * half_extent[0] / mx
    lat_scale = 1.5 * half_extent[1] / my
    sx, sy, sh = lon_scale * mx, lat_scale * my, height_scale
    samp_scale, line_scale = max(w / 2, 1.0), max(h / 2, 1.0)
    tan = math.tan(math.radians(view.off_nadir))
    te = tan * math.sin(math.radians(view.azimuth))
    tn = tan * math.cos(math.radians(view.azimuth))
    ck = math.cos(math.radians(view.kappa))
    sk = math.sin(math.radians(view.kappa))
    g = view.gsd

    samp_num = np.zeros(20)
    line_num = np.zeros(20)
    samp_num[1] = ck * sx / (g * samp_scale)
    samp_num[2] = -sk * sy / (g * samp_scale)
    samp_num[3] = sh * (ck * te - sk * tn) / (g * samp_scale)
    line_num[1] = -sk * sx / (g * line_scale)
    line_num[2] = -ck * sy / (g * line_scale)
    line_num[3] = -sh * (sk * te + ck * tn) / (g * line_scale)
    line_den = np.zeros(20)
    samp_den = np.zeros(20)
    line_den[0] = samp_den[0] = 1.0
    if view.cubic:
        rng = np.random.default_rng(view.seed)
        for poly in (samp_num, line_num, samp_den, line_den):
            poly[4:] += rng.uniform(-view.cubic, view.cubic, size=16)
    return RpcModel(
        line_off=(h - 1) / 2, samp_off=(w - 1) / 2, line_scale=line_scale, samp_scale=samp_scale,
        lat_off=lat0, lon_off=lon0, lat_scale=lat_scale, lon_scale=lon_scale,
        height_off=h0, height_scale=height_scale,
        line_num=line_num, line_den=line_den, samp_num=samp_num, samp_den=samp_den,
    )


def scene_camera(spec: SceneSpec, k: int, margin: int = 4) -> tuple[RpcModel, tuple[int, int]]:
    """RPC and image size of the k-th camera of a scene."""
    view = spec.cameras[k]
    size = view_frame(view, spec, margin)
    lo, hi = _height_range(spec)
    cam = make_rpc(view, (spec.lon0, spec.lat0, spec.h0), image_size=size,
                   half_extent=(spec.extent[0] / 2, spec.extent[1] / 2),
                   height_scale=max(100.0, hi - spec.h0 + 20, spec.h0 - lo + 20))
    return cam, size


@dataclass
class Rendering:
    image: Raster
    altitude: Raster  # exact altitude of the first surface hit


def _surface(dsm: np.ndarray, gt, x, y) -> np.ndarray:
    """Heightfield lookup: value of the DSM cell containing (x, y)."""
    c, r = ground_to_pixel(gt, x, y)
    ci = np.floor(c).astype(np.intp)
    ri = np.floor(r).astype(np.intp)
    inside = (ci >= 0) & (ci < dsm.shape[1]) & (ri >= 0) & (ri < dsm.shape[0])
    out = np.full(np.shape(x), -np.inf)
    out[inside] = dsm[ri[inside], ci[inside]]
    return np.where(np.isnan(out), -np.inf, out)


def render(scene: Scene, rpc: RpcModel, out_size, camera: int = 0, n_bisect: int = 6) -> Rendering:
    """Ray-march each pixel's viewing ray against the DSM heightfield.

    Rays are stepped downward by cell/2 from above the highest surface;
    the first crossing is refined by bisection. A crossing of a horizontal
    surface reports that surface's exact altitude, a wall hit reports the
    ray altitude at the refined crossing. Texture ``camera`` is sampled at
    the hit's ground position.
    """
    spec = scene.spec
    w, h = out_size
    dsm = np.asarray(scene.dsm.data, dtype=float)
    gt = scene.dsm.geotransform
    top = float(np.nanmax(dsm)) + spec.cell
    bot = float(np.nanmin(dsm)) - spec.cell
    cols, rows = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))

    # ground track of each ray, piecewise linear in altitude between knots
    n_knots = max(2, int(math.ceil((top - bot) / 10.0)) + 1)
    knots = np.linspace(top, bot, n_knots)
    track = []
    for hk in knots:
        lon, lat = localize(rpc, cols, rows, hk)
        track.append(lonlat_to_local(lon, lat, spec.origin))
    kx = np.stack([t[0].ravel() for t in track])
    ky = np.stack([t[1].ravel() for t in track])
    flat_idx = np.arange(cols.size)

    def ground(hq):
        if np.ndim(hq) == 0:
            pos = min(max((top - hq) / (top - bot) * (n_knots - 1), 0.0), n_knots - 1.0)
            i0 = min(int(pos), n_knots - 2)
            f = pos - i0
            x = kx[i0] * (1 - f) + kx[i0 + 1] * f
            y = ky[i0] * (1 - f) + ky[i0 + 1] * f
            return x.reshape(cols.shape), y.reshape(cols.shape)
        hq = np.broadcast_to(np.asarray(hq, dtype=float), cols.shape).ravel()
        pos = np.clip((top - hq) / (top - bot) * (n_knots - 1), 0, n_knots - 1)
        i0 = np.minimum(np.floor(pos).astype(np.intp), n_knots - 2)
        f = pos - i0
        x = kx[i0, flat_idx] * (1 - f) + kx[i0 + 1, flat_idx] * f
        y = ky[i0, flat_idx] * (1 - f) + ky[i0 + 1, flat_idx] * f
        return x.reshape(cols.shape), y.reshape(cols.shape)

    step = spec.cell / 2
    above = np.full(cols.shape, top)
    below = np.full(cols.shape, np.nan)
    hit = np.zeros(cols.shape, dtype=bool)
    hk = top
    while hk > bot and not hit.all():
        hk = hk - step
        x, y = ground(hk)
        new = ~hit & (hk <= _surface(dsm, gt, x, y))
        below[new] = hk
        hit |= new
        above[~hit] = hk

    a = np.where(hit, above, np.nan)
    b = below
    for _ in range(n_bisect):
        m = (a + b) / 2
        x, y = ground(np.where(hit, m, top))
        under = m <= _surface(dsm, gt, x, y)
        b = np.where(hit & under, m, b)
        a = np.where(hit & ~under, m, a)
    xb, yb = ground(np.where(hit, b, top))
    s_hit = _surface(dsm, gt, xb, yb)
    flat = hit & (a >= s_hit)
    alt = np.where(flat, s_hit, b)
    xs, ys = ground(np.where(hit, alt, top))
    alt = np.where(hit, alt, np.nan)

    tc, tr = ground_to_pixel(scene.textures[camera].geotransform, xs, ys)
    tex = bilinear_sample(np.asarray(scene.textures[camera].data, dtype=float), tc - 0.5, tr - 0.5)
    image = np.where(hit, tex, np.nan)
    return Rendering(Raster(image), Raster(alt))


def exact_matches(rendering: Rendering, rpc_a: RpcModel, rpc_b: RpcModel, n: int = 200,
                  seed: int = 0, size_b=None):
    """Correspondences a -> b computed from the true hit altitudes.

    Args:
        rendering: rendering of camera a (its altitude sideband is used).
        rpc_a, rpc_b: the two cameras.
        n: number of matches to draw among valid pixels.
        size_b: optional (w, h) of image b; matches falling outside dropped.

    Returns:
        (n, 4) array of (u_a, v_a, u_b, v_b).
    """
    alt = np.asarray(rendering.altitude.data, dtype=float)
    rows, cols = np.nonzero(np.isfinite(alt))
    rng = np.random.default_rng(seed)
    idx = rng.choice(rows.size, size=min(n, rows.size), replace=False)
    u = cols[idx].astype(float)
    v = rows[idx].astype(float)
    z = alt[rows[idx], cols[idx]]
    lon, lat = localize(rpc_a, u, v, z)
    ub, vb = project(rpc_b, lon, lat, z)
    m = np.column_stack([u, v, ub, vb])
    if size_b is not None:
        ok = (ub >= 0) & (ub <= size_b[0] - 1) & (vb >= 0) & (vb <= size_b[1] - 1)
        m = m[ok]
    return m
