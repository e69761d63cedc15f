from __future__ import annotations

import datetime as dt
import json
import warnings

import pytest
from hypothesis import given
from hypothesis import strategies as st

from diastereo.curate import (
    CurateConfig,
    ImageMeta,
    as_date,
    build_manifest,
    label_from,
    label_pair,
    load_image_meta,
    matches_from_dir,
    read_manifest,
    seasonal_gap,
    write_manifest,
)
from diastereo.errors import InsufficientPairs


def test_seasonal_gap_examples():
    assert seasonal_gap("2015-01-10", "2015-11-20") == 51.25
    assert seasonal_gap("2016-03-01", "2016-03-01") == 0
    assert seasonal_gap(dt.date(2015, 5, 1), dt.date(2016, 4, 30)) == 0.25


@given(st.dates(), st.dates())
def test_seasonal_gap_pseudometric(a, b):
    g = seasonal_gap(a, b)
    assert 0 <= g <= 365.25 / 2
    assert g == seasonal_gap(b, a)
    assert seasonal_gap(a, a) == 0


@pytest.mark.parametrize("gap,n,label", [
    (51.25, 12, "Diachronic"), (5, 100, "Synchronic"), (51.25, 100, "Unlabeled"), (5, 12, "Unlabeled"),
    (30, 40, "Synchronic"), (30.001, 39, "Diachronic"),
])
def test_label_examples(gap, n, label):
    assert label_from(gap, n) == label


def meta(i, date, aoi="A"):
    return ImageMeta(f"img{i}", aoi, date)


def test_label_pair_is_symmetric():
    a, b = meta(0, "2015-01-10"), meta(1, "2015-11-20")
    la, lb = label_pair(a, b, 12), label_pair(b, a, 12)
    assert (la.label, la.gap_days) == (lb.label, lb.gap_days) == ("Diachronic", 51.25)


def test_season_wrapped_flag():
    lab = label_pair(meta(0, "2015-05-01"), meta(1, "2016-04-20"), 100)
    assert lab.label == "Synchronic" and lab.season_wrapped
    assert not label_pair(meta(0, "2015-05-01"), meta(1, "2015-05-10"), 100).season_wrapped


def test_per_megapixel_thresholds():
    cfg = CurateConfig(per_megapixel=True)
    a, b = meta(0, "2015-01-01"), meta(1, "2015-01-05")
    assert label_pair(a, b, 100, cfg, area_px=2e6).label == "Synchronic"  # 50 / Mpx
    assert label_pair(a, b, 60, cfg, area_px=2e6).label == "Unlabeled"  # 30 / Mpx
    with pytest.raises(ValueError):
        label_pair(a, b, 60, cfg)


def test_as_date_forms():
    assert as_date("2015-01-10T23:30:00-05:00") == dt.date(2015, 1, 11)
    assert as_date("2015-01-10T12:00:00Z") == dt.date(2015, 1, 10)
    assert as_date(dt.datetime(2015, 1, 10, 5)) == dt.date(2015, 1, 10)


def world():
    dates = ["2015-01-01", "2015-01-10", "2015-03-15", "2015-06-01", "2015-06-20", "2015-09-09",
             "2016-01-03", "2016-10-30"]
    images = [meta(i, d, "A") for i, d in enumerate(dates)] + [meta(10 + i, d, "B") for i, d in enumerate(dates)]

    def matches(a, b):
        return 100 if seasonal_gap(a.acq_date, b.acq_date) <= 30 else 10

    return images, matches


def test_manifest_deterministic_and_within_quota():
    images, matches = world()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InsufficientPairs)
        a = build_manifest(images, matches, {"dia_per_aoi": 5, "sync_per_aoi": 2}, seed=3)
        b = build_manifest(images, matches, {"dia_per_aoi": 5, "sync_per_aoi": 2}, seed=3)
    assert [(p.a, p.b, p.label) for p in a] == [(p.a, p.b, p.label) for p in b]
    for aoi in ("A", "B"):
        labels = [p.label for p in a if p.aoi == aoi]
        assert labels.count("Diachronic") == 5 and labels.count("Synchronic") == 2
    for p in a:
        assert p.label == label_from(p.gap_days, p.n_matches)


def test_manifest_warns_insufficient_pairs():
    images = [meta(i, f"{2015 + i}-06-01") for i in range(4)]  # all near-anniversary
    with pytest.warns(InsufficientPairs):
        out = build_manifest(images, lambda a, b: 200, {"dia_per_aoi": 3, "sync_per_aoi": 1}, seed=0)
    assert all(p.label == "Synchronic" for p in out) and len(out) == 1


def test_manifest_from_dict_and_dir(tmp_path):
    images = [meta(0, "2015-01-01"), meta(1, "2015-01-05"), meta(2, "2015-07-01")]
    table = {("img0", "img1"): 50, ("img2", "img0"): 3, ("img1", "img2"): 3}
    for (x, y), n in table.items():
        (tmp_path / f"{x}__{y}.csv").write_text("# header\n" + "1,2,3,4\n" * n)
    q = {"dia_per_aoi": 2, "sync_per_aoi": 1}
    a = build_manifest(images, table, q)
    b = build_manifest(images, tmp_path, q)
    assert [p.manifest_record() for p in a] == [p.manifest_record() for p in b]
    assert matches_from_dir(tmp_path)(images[1], images[0]) == 50

    path = tmp_path / "manifest.jsonl"
    write_manifest(a, path)
    assert read_manifest(path) == [p.manifest_record() for p in a]


def test_load_image_meta(tmp_path):
    p = tmp_path / "images.json"
    p.write_text(json.dumps({"images": [{"image_id": "x", "aoi_id": "A", "acq_date": "2015-02-03"}]}))
    (m,) = load_image_meta(p)
    assert m.acq_date == dt.date(2015, 2, 3) and m.rpc_path is None
