from __future__ import annotations

import numpy as np
import pytest

from diastereo.plot import auto_range, colorize, plot
from diastereo.raster import Raster


def test_constant_gray_is_mid_gray():
    img = colorize(Raster(np.full((4, 5), 3.0)))
    assert img.shape == (4, 5) and np.all(img == 128)


@pytest.mark.parametrize("colormap", ["gray", "turbo"])
def test_nodata_is_black(colormap):
    z = np.arange(12.0).reshape(3, 4)
    z[1, 2] = np.nan
    img = colorize(Raster(z), colormap)
    assert np.all(img[1, 2] == 0)


def test_turbo_endpoints():
    img = colorize(Raster([[0.0, 1.0]]), "turbo", (0.0, 1.0))
    assert tuple(img[0, 0]) == (48, 18, 59)
    assert tuple(img[0, 1]) == (122, 4, 3)


def test_linear_gray_mapping():
    img = colorize(Raster([[0.0, 0.5, 1.0, 2.0, -1.0]]), "gray", (0.0, 1.0))
    assert img.tolist() == [[0, 128, 255, 255, 0]]


def test_auto_range_percentiles():
    v = np.arange(101.0)
    assert auto_range(v) == (2.0, 98.0)


def test_plot_writes_netpbm(tmp_path):
    r = Raster(np.arange(6.0).reshape(2, 3))
    plot(r, tmp_path / "a.pgm")
    plot(r, tmp_path / "a.ppm", "turbo")
    a = (tmp_path / "a.pgm").read_bytes()
    b = (tmp_path / "a.ppm").read_bytes()
    assert a.startswith(b"P5\n3 2\n255\n") and len(a) == 11 + 6
    assert b.startswith(b"P6\n3 2\n255\n") and len(b) == 11 + 18


def test_rejects_multichannel():
    with pytest.raises(ValueError):
        colorize(Raster(np.zeros((2, 2, 2))))
