"""Compare the ZNCC block matcher on same-season and different-season renderings.

The geometry is identical; only the texture decorrelation changes.
"""

from __future__ import annotations

import numpy as np

from diastereo.dense_match import DenseConfig, block_match
from diastereo.evaluate import disp_error
from diastereo.gt import discontinuity_mask, gt_disparity
from diastereo.rectify import rectify_pair
from diastereo.sparse_match import MatchSet
from diastereo.synth import box_scene, exact_matches, make_scene, render, scene_camera


def run(decorrelation: float) -> None:
    spec = box_scene(0, season_decorrelation=decorrelation)
    scene = make_scene(spec)
    (ra, sa), (rb, sb) = scene_camera(spec, 0), scene_camera(spec, 1)
    a, b = render(scene, ra, sa, 0), render(scene, rb, sb, 1)
    z = np.asarray(scene.dsm.data, dtype=float)
    m = exact_matches(a, ra, rb, 300, size_b=sb)
    rect = rectify_pair(a.image, ra, b.image, rb, float(np.median(z)), MatchSet(m), h_range=(z.min(), z.max()))

    gt = gt_disparity(rect, scene.dsm)
    g = np.asarray(gt.data, dtype=float)
    cfg = DenseConfig(d_min=int(np.floor(np.nanmin(g))) - 2, d_max=int(np.ceil(np.nanmax(g))) + 2)
    d = block_match(rect.rect_left, rect.rect_right, cfg)
    masked = gt.with_data(np.where(discontinuity_mask(g, dilate=2), np.nan, g))
    mae, rmse = disp_error(d, masked)
    coverage = np.isfinite(d.data).sum() / np.isfinite(g).sum()
    print(f"decorrelation {decorrelation:.1f}: MAE {mae:.3f} px, RMSE {rmse:.3f} px, coverage {coverage:.2f}")


if __name__ == "__main__":
    for dec in (0.0, 0.5, 1.0):
        run(dec)
