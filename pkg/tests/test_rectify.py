from __future__ import annotations

import numpy as np
import pytest
from conftest import random_pair

from diastereo.errors import DegenerateGeometry, EmptyMatchSet, MatchFailure
from diastereo.homography import Homography
from diastereo.raster import Raster
from diastereo.rectify import (
    disparity_decreases_with_altitude,
    enforce_polarity,
    load_rectification,
    rectified_disparity,
    rectify_pair,
    reduce_disp_range,
    rpc_rectify,
    save_rectification,
    vertical_residuals,
    virtual_matches,
)
from diastereo.sparse_match import MatchSet
from diastereo.synth import ViewSpec, make_rpc

CENTER = (-95.93, 41.26, 100.0)
ROI = (0, 0, 240, 240)


def disparity_range(H_L, H_R, ra, rb):
    m = virtual_matches(ra, rb, ROI, (60.0, 100.0, 140.0), grid_n=7)
    ul, _ = H_L(m[:, 0], m[:, 1])
    ur, _ = H_R(m[:, 2], m[:, 3])
    d = ul - ur
    return d.max() - d.min()


def test_enforce_polarity_examples():
    m = np.array([[3.0, 0, 0, 0], [-2.0, 0, 0, 0], [5.0, 0, 0, 0]])
    H, t, s = enforce_polarity(Homography.identity(), MatchSet(m))
    assert t == -2.0
    ur, _ = H(m[:, 2], m[:, 3])
    assert (m[:, 0] - ur).tolist() == [5.0, 0.0, 7.0]

    m = np.array([[0, 1.0, 0, 0], [0, 1.2, 0, 0], [0, 0.8, 0, 0]])
    assert enforce_polarity(Homography.identity(), MatchSet(m))[2] == 1.0

    H, t, s = enforce_polarity(Homography.identity(), MatchSet([[10.0, 3.0, 6.0, 3.5]]))
    assert (t, s) == (4.0, -0.5)
    assert 10.0 - H(6.0, 3.5)[0] == 0.0


def test_enforce_polarity_empty():
    with pytest.raises(EmptyMatchSet):
        enforce_polarity(Homography.identity(), MatchSet())


def test_already_rectified_cameras():
    # both cameras look east: parallax runs along image rows
    ra = make_rpc(ViewSpec(90.0, 10.0), CENTER, image_size=(240, 240), half_extent=(50, 50))
    rb = make_rpc(ViewSpec(90.0, 25.0), CENTER, image_size=(240, 240), half_extent=(50, 50))
    H_L, H_R = rpc_rectify(ra, rb, ROI, (60.0, 140.0))
    np.testing.assert_allclose(H_L.m[:2, :2], np.eye(2), atol=1e-6)
    np.testing.assert_allclose(H_R.m[:2, :2], np.eye(2), atol=1e-6)
    assert abs(H_L.m[1, 2] - H_R.m[1, 2]) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_rpc_rectify_epipolar_on_held_out_grid(seed):
    ra, rb, *_ = random_pair(seed)
    H_L, H_R = rpc_rectify(ra, rb, ROI, (60.0, 140.0))
    m = virtual_matches(ra, rb, ROI, np.linspace(60.0, 140.0, 5), grid_n=50)
    assert np.max(np.abs(vertical_residuals(H_L, H_R, m))) <= 0.25


@pytest.mark.parametrize("seed", range(3))
def test_rpc_rectify_symmetric(seed):
    ra, rb, *_ = random_pair(seed)
    H_L, H_R = rpc_rectify(ra, rb, ROI, (60.0, 140.0))
    G_L, G_R = rpc_rectify(rb, ra, ROI, (60.0, 140.0))
    np.testing.assert_allclose(G_L.m, H_R.m, atol=1e-9)
    np.testing.assert_allclose(G_R.m, H_L.m, atol=1e-9)


def test_identical_cameras_degenerate():
    ra = make_rpc(ViewSpec(30.0, 15.0), CENTER, image_size=(240, 240))
    with pytest.raises(DegenerateGeometry):
        rpc_rectify(ra, ra, ROI, (60.0, 140.0))


def test_nadir_pair_degenerate():
    ra = make_rpc(ViewSpec(0.0, 0.0), CENTER, image_size=(240, 240))
    rb = make_rpc(ViewSpec(0.0, 0.0, kappa=5.0), CENTER, image_size=(240, 240))
    with pytest.raises(DegenerateGeometry):
        rpc_rectify(ra, rb, ROI, (60.0, 140.0))


@pytest.mark.parametrize("seed", range(20))
def test_reduce_disp_range(seed):
    ra, rb, *_ = random_pair(seed)
    H_L, H_R = rpc_rectify(ra, rb, ROI, (60.0, 140.0))
    H_R2 = reduce_disp_range(H_L, H_R, ra, rb, 100.0, ROI)
    assert disparity_range(H_L, H_R2, ra, rb) <= disparity_range(H_L, H_R, ra, rb) * (1 + 1e-6)
    m = virtual_matches(ra, rb, ROI, (100.0,), grid_n=7)
    ul, _ = H_L(m[:, 0], m[:, 1])
    ur, _ = H_R2(m[:, 2], m[:, 3])
    assert np.sqrt(np.mean((ul - ur) ** 2)) <= 0.5
    # a second pass finds nothing left to correct
    H_R3 = reduce_disp_range(H_L, H_R2, ra, rb, 100.0, ROI)
    np.testing.assert_allclose(H_R3.m, H_R2.m, atol=1e-6)


def test_disparity_direction_constructed_geometry():
    # left looks west-down from the east, right from the west: higher points
    # shift right in the left view and left in the right view
    ra = make_rpc(ViewSpec(90.0, 20.0), CENTER, image_size=(240, 240), half_extent=(50, 50))
    rb = make_rpc(ViewSpec(270.0, 20.0), CENTER, image_size=(240, 240), half_extent=(50, 50))
    H = Homography.identity()
    assert rectified_disparity(H, H, ra, rb, (120, 120), 110.0) > rectified_disparity(H, H, ra, rb, (120, 120), 100.0)
    assert not disparity_decreases_with_altitude(H, H, rb, ra, 100.0)
    assert disparity_decreases_with_altitude(H, H, ra, rb, 100.0)
    assert not disparity_decreases_with_altitude(H, H, ra, rb, 100.0, dz=-10.0)


@pytest.mark.parametrize("seed", range(5))
def test_disparity_direction_antisymmetric(seed):
    ra, rb, *_ = random_pair(seed)
    H_L, H_R = rpc_rectify(ra, rb, ROI, (60.0, 140.0))
    a = disparity_decreases_with_altitude(H_R, H_L, rb, ra, 100.0)
    b = disparity_decreases_with_altitude(H_L, H_R, ra, rb, 100.0)
    assert a != b
    assert disparity_decreases_with_altitude(H_R, H_L, rb, ra, 100.0, dz=-10.0) != a


@pytest.mark.parametrize("seed", range(5))
def test_rectify_pair_polarity_and_epipolarity(seed):
    ra, rb, left, right, m = random_pair(seed)
    res = rectify_pair(left, ra, right, rb, 100.0, m)
    rm = res.matches.matches
    ur, vr = Homography.translation(res.t, res.s)(rm[:, 2], rm[:, 3])
    d = rm[:, 0] - ur
    assert d.min() == pytest.approx(0.0, abs=1e-9)
    assert np.all(d >= -1e-9)
    cam_l, cam_r = res.cameras()
    held = virtual_matches(cam_l, cam_r, (0, 0, *res.left_size), np.linspace(60, 140, 5), grid_n=50)
    assert np.max(np.abs(vertical_residuals(res.H_L, res.H_R, held))) <= 0.25
    center = ((res.left_size[0] - 1) / 2, (res.left_size[1] - 1) / 2)
    d0 = rectified_disparity(res.H_L, res.H_R, cam_l, cam_r, center, 100.0)
    d1 = rectified_disparity(res.H_L, res.H_R, cam_l, cam_r, center, 110.0)
    assert d1 > d0


@pytest.mark.parametrize("seed", range(3))
def test_rectify_pair_permutation(seed):
    ra, rb, left, right, m = random_pair(seed)
    a = rectify_pair(left, ra, right, rb, 100.0, m)
    b = rectify_pair(right, rb, left, ra, 100.0, m.swapped())
    assert a.swapped != b.swapped
    # the shared translation can move the frame's integer rounding by one pixel
    assert np.all(np.abs(np.subtract(a.out_size, b.out_size)) <= 1)
    # the two results differ by one shared row-preserving affine map
    T_L = (a.H_L @ b.H_L.inverse()).m
    T_R = (a.H_R @ b.H_R.inverse()).m
    np.testing.assert_allclose(T_L, T_R, atol=1e-6)
    np.testing.assert_allclose(T_L[1], [0, 1, 0], atol=1e-6)


def test_rectify_pair_deterministic():
    ra, rb, left, right, m = random_pair(7)
    a = rectify_pair(left, ra, right, rb, 100.0, m)
    b = rectify_pair(left, ra, right, rb, 100.0, m)
    assert a.swapped == b.swapped and a.t == b.t and a.s == b.s
    np.testing.assert_array_equal(a.H_R.m, b.H_R.m)
    np.testing.assert_array_equal(a.rect_right.data, b.rect_right.data)


def test_auto_matching_fails_on_unrelated_images():
    ra, rb, left, right, _ = random_pair(1)
    flat = Raster(np.full((240, 240), 100.0))
    with pytest.raises(MatchFailure):
        rectify_pair(flat, ra, flat, rb, 100.0, "auto")


def test_auto_matching_on_rendered_pair(box_world):
    w = box_world
    res = rectify_pair(w["render_a"].image, w["rpc_a"], w["render_b"].image, w["rpc_b"], 100.0, "auto")
    assert res.matches.source == "builtin"
    assert len(res.matches) >= 40


def test_save_load_round_trip(tmp_path):
    ra, rb, left, right, m = random_pair(2)
    res = rectify_pair(left, ra, right, rb, 100.0, m)
    save_rectification(res, tmp_path / "rect")
    back = load_rectification(tmp_path / "rect")
    np.testing.assert_array_equal(back.H_L.m, res.H_L.m)
    np.testing.assert_array_equal(back.H_R.m, res.H_R.m)
    np.testing.assert_array_equal(back.rect_left.data, res.rect_left.data)
    assert back.meta() == res.meta()
    assert back.rpc_left.to_dict() == res.rpc_left.to_dict()
