"""Label the pairs of a small made-up acquisition list and sample a manifest."""

from __future__ import annotations

import warnings

from diastereo.curate import ImageMeta, build_manifest, label_pair
from diastereo.errors import InsufficientPairs

DATES = ["2015-01-10", "2015-01-24", "2015-04-02", "2015-07-15", "2015-11-20", "2016-01-05"]


def match_count(a: ImageMeta, b: ImageMeta) -> int:
    # stand-in for a SIFT run: close seasons keep many matches
    gap = label_pair(a, b, 0).gap_days
    return max(0, int(120 - 2 * gap))


def main() -> None:
    images = [ImageMeta(f"img{k}", "AOI_A", d) for k, d in enumerate(DATES)]
    for i, a in enumerate(images):
        for b in images[i + 1:]:
            lab = label_pair(a, b, match_count(a, b))
            flag = " (season-wrapped)" if lab.season_wrapped else ""
            print(f"{a.image_id}-{b.image_id}: gap {lab.gap_days:6.2f} d, {lab.n_matches:3d} matches -> {lab.label}{flag}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", InsufficientPairs)
        manifest = build_manifest(images, match_count, {"dia_per_aoi": 4, "sync_per_aoi": 2}, seed=1)
    print(f"manifest: {[(p.a, p.b, p.label) for p in manifest]}")
    for w in caught:
        print(f"warning: {w.message}")


if __name__ == "__main__":
    main()
