from __future__ import annotations

import numpy as np
import pytest

from diastereo.raster import Raster
from diastereo.rectify import rectify_pair, virtual_matches
from diastereo.sparse_match import MatchSet
from diastereo.synth import (
    SceneSpec,
    ViewSpec,
    box_scene,
    exact_matches,
    make_rpc,
    make_scene,
    render,
    scene_camera,
)


def random_views(seed: int):
    """Two random off-nadir views with distinct viewing directions."""
    rng = np.random.default_rng(seed)
    while True:
        az = rng.uniform(0, 360, size=2)
        off = rng.uniform(5, 30, size=2)
        kappa = rng.uniform(-20, 20, size=2)
        a = np.array([np.sin(np.radians(az[0])), np.cos(np.radians(az[0]))]) * np.tan(np.radians(off[0]))
        b = np.array([np.sin(np.radians(az[1])), np.cos(np.radians(az[1]))]) * np.tan(np.radians(off[1]))
        if np.hypot(*(a - b)) > 0.1:  # enough base for a usable pair
            return (ViewSpec(az[0], off[0], kappa=kappa[0], seed=seed),
                    ViewSpec(az[1], off[1], kappa=kappa[1], seed=seed + 1))


def random_pair(seed: int, size=(240, 240), h0=100.0, cubic=0.0):
    """Cameras, noise images and exact matches for a random synthetic pair."""
    va, vb = random_views(seed)
    if cubic:
        va.cubic = vb.cubic = cubic
    center = (-95.93, 41.26, h0)
    ra = make_rpc(va, center, image_size=size, half_extent=(50.0, 50.0))
    rb = make_rpc(vb, center, image_size=size, half_extent=(50.0, 50.0))
    rng = np.random.default_rng(seed)
    left = Raster(rng.uniform(0, 255, size=size[::-1]))
    right = Raster(rng.uniform(0, 255, size=size[::-1]))
    m = virtual_matches(ra, rb, (40, 40, size[0] - 80, size[1] - 80), (h0 - 20, h0, h0 + 20), grid_n=5)
    return ra, rb, left, right, MatchSet(m[:, :4])


@pytest.fixture(scope="session")
def box_world():
    """The default box scene rendered by its two cameras."""
    spec = box_scene(0)
    scene = make_scene(spec)
    (ra, sa), (rb, sb) = scene_camera(spec, 0), scene_camera(spec, 1)
    return {
        "spec": spec, "scene": scene, "rpc_a": ra, "rpc_b": rb, "size_a": sa, "size_b": sb,
        "render_a": render(scene, ra, sa, 0), "render_b": render(scene, rb, sb, 1),
    }


@pytest.fixture(scope="session")
def box_rect(box_world):
    w = box_world
    m = exact_matches(w["render_a"], w["rpc_a"], w["rpc_b"], 300, size_b=w["size_b"])
    z = np.asarray(w["scene"].dsm.data, dtype=float)
    rect = rectify_pair(w["render_a"].image, w["rpc_a"], w["render_b"].image, w["rpc_b"],
                        float(np.median(z)), MatchSet(m), h_range=(z.min(), z.max()))
    return rect


@pytest.fixture(scope="session")
def flat_world():
    """A small flat scene with its two cameras and renderings."""
    spec = SceneSpec(extent=(64.0, 64.0), terrain="flat", h0=100.0)
    scene = make_scene(spec)
    (ra, sa), (rb, sb) = scene_camera(spec, 0), scene_camera(spec, 1)
    return {
        "spec": spec, "scene": scene, "rpc_a": ra, "rpc_b": rb, "size_a": sa, "size_b": sb,
        "render_a": render(scene, ra, sa, 0), "render_b": render(scene, rb, sb, 1),
    }


@pytest.fixture(scope="session")
def box_world_diachronic():
    """The default box scene with fully decorrelated (different-season) textures."""
    spec = box_scene(0, season_decorrelation=1.0)
    scene = make_scene(spec)
    (ra, sa), (rb, sb) = scene_camera(spec, 0), scene_camera(spec, 1)
    return {
        "spec": spec, "scene": scene, "rpc_a": ra, "rpc_b": rb, "size_a": sa, "size_b": sb,
        "render_a": render(scene, ra, sa, 0), "render_b": render(scene, rb, sb, 1),
    }
