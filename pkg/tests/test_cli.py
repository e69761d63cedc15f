from __future__ import annotations

import json
import re

import numpy as np
import pytest

from diastereo.cli import main, sha256
from diastereo.raster import Raster, read_raster, write_raster


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out-dir", str(out), "--seed", "0"]) == 0
    return out


def cams(d):
    return ["--left", str(d / "left.dsrast"), "--right", str(d / "right.dsrast"),
            "--rpc-left", str(d / "left.rpc.json"), "--rpc-right", str(d / "right.rpc.json")]


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_synth_outputs(scene_dir):
    for name in ("dsm.dsrast", "left.dsrast", "right.dsrast", "left.rpc.json", "right.rpc.json", "matches.csv"):
        assert (scene_dir / name).is_file()
    meta = json.loads((scene_dir / "dsm.dsrast.meta.json").read_text())
    assert meta["output_sha256"] == sha256(scene_dir / "dsm.dsrast")


def test_pipeline_on_box_scene(scene_dir, tmp_path, capsys):
    code = main(["pipeline", *cams(scene_dir), "--dsm", str(scene_dir / "dsm.dsrast"), "--edge-band", "2",
                 "--out-dir", str(tmp_path)])
    assert code == 0
    mae = float(re.search(r"MAE ([0-9.]+) m", capsys.readouterr().out).group(1))
    assert mae <= 0.15
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["mae_m"] <= 0.15
    # the chain of sidecars records the hashes of what each stage read
    grid_meta = json.loads((tmp_path / "dsm.dsrast.meta.json").read_text())
    assert grid_meta["inputs"][str(tmp_path / "alt.dsrast")] == sha256(tmp_path / "alt.dsrast")


def test_pipeline_from_config(scene_dir, tmp_path, capsys):
    conf = {"left": "left.dsrast", "right": "right.dsrast", "rpc_left": "left.rpc.json",
            "rpc_right": "right.rpc.json", "dsm": "dsm.dsrast", "disparity": "gt", "edge_band": 2,
            "out_dir": str(tmp_path / "out")}
    path = scene_dir / "pipeline.json"
    path.write_text(json.dumps(conf))
    assert main(["pipeline", "--config", str(path)]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["mae_m"] <= 0.15


def test_unknown_flag_is_usage_error(capsys):
    assert main(["eval", "--bogus", "1"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and '"UsageError"' in err


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 1


def test_missing_rpc_file(scene_dir, tmp_path, capsys):
    args = cams(scene_dir)
    args[args.index("--rpc-left") + 1] = str(tmp_path / "nope.rpc.json")
    assert main(["rectify", *args, "--zavg", "100", "--h-range", "90", "110", "--out-dir", str(tmp_path / "r")]) == 2
    assert last_error(capsys)["error"] == "MissingCoefficient"


def test_rpc_missing_coefficient(scene_dir, tmp_path, capsys):
    d = json.loads((scene_dir / "left.rpc.json").read_text())
    del d["line_off"]
    bad = tmp_path / "bad.rpc.json"
    bad.write_text(json.dumps(d))
    args = cams(scene_dir)
    args[args.index("--rpc-left") + 1] = str(bad)
    assert main(["rectify", *args, "--zavg", "100", "--h-range", "90", "110", "--out-dir", str(tmp_path / "r")]) == 2
    diag = last_error(capsys)
    assert diag["error"] == "MissingCoefficient" and "line_off" in diag["message"].lower()


def test_numerical_failure_exit_code(scene_dir, tmp_path, capsys):
    args = cams(scene_dir)
    args[args.index("--rpc-right") + 1] = args[args.index("--rpc-left") + 1]
    args[args.index("--right") + 1] = args[args.index("--left") + 1]
    assert main(["rectify", *args, "--zavg", "100", "--h-range", "90", "110", "--out-dir", str(tmp_path / "r")]) == 3
    assert last_error(capsys)["error"] == "DegenerateGeometry"


def test_config_values_yield_to_flags(tmp_path, capsys):
    pred = Raster(np.ones((4, 4)), geotransform=(0, 1, 0, 0, 0, -1))
    ref = Raster(np.zeros((4, 4)), geotransform=(0, 1, 0, 0, 0, -1))
    write_raster(pred, tmp_path / "p.dsrast")
    write_raster(ref, tmp_path / "r.dsrast")
    conf = tmp_path / "eval.json"
    conf.write_text(json.dumps({"pred": str(tmp_path / "p.dsrast"), "ref": str(tmp_path / "r.dsrast"), "margin": 9}))
    assert main(["eval", "--config", str(conf)]) == 2  # a 9-pixel margin leaves nothing
    assert last_error(capsys)["error"] == "NoEvaluablePixels"
    assert main(["eval", "--config", str(conf), "--margin", "1", "--json", str(tmp_path / "e.json")]) == 0
    assert json.loads((tmp_path / "e.json").read_text())["n_eval"] == 4


def test_eval_agg(tmp_path, capsys):
    maes = {"A": [1.0, 2.0, 10.0], "B": [3.0, 5.0]}
    for aoi, vals in maes.items():
        for i, m in enumerate(vals):
            rep = {"pair_id": f"{aoi}_{i}", "mae_m": m, "rmse_m": m, "completeness": 1.0, "n_eval": 1}
            (tmp_path / f"{aoi}_{i}.json").write_text(json.dumps(rep))
    assert main(["eval-agg", "--reports", str(tmp_path), "--json", str(tmp_path / "summary.out")]) == 0
    s = json.loads((tmp_path / "summary.out").read_text())
    assert [a["median_mae_m"] for a in s["aois"]] == [2.0, 4.0]
    assert s["mean_m"] == 3.0 and s["std_m"] == 1.0


def test_import_disp_and_plot(tmp_path):
    d = Raster(np.array([[-1.0, -2.5], [np.nan, -4.0]], dtype=np.float32))
    write_raster(d, tmp_path / "ext.pfm")
    assert main(["import-disp", "--in", str(tmp_path / "ext.pfm"), "--negate", "--out", str(tmp_path / "d.pfm")]) == 0
    got = read_raster(tmp_path / "d.pfm").data
    np.testing.assert_array_equal(got, -np.asarray(d.data))
    assert main(["plot", "--in", str(tmp_path / "d.pfm"), "--out", str(tmp_path / "d.ppm"), "--colormap", "turbo"]) == 0
    assert (tmp_path / "d.ppm").read_bytes().startswith(b"P6")


def test_curate_cli(tmp_path, capsys):
    images = [{"image_id": f"i{k}", "aoi_id": "A", "acq_date": d}
              for k, d in enumerate(["2015-01-01", "2015-01-05", "2015-07-01"])]
    (tmp_path / "meta.json").write_text(json.dumps(images))
    mdir = tmp_path / "m"
    mdir.mkdir()
    (mdir / "i0__i1.csv").write_text("1,2,3,4\n" * 45)
    (mdir / "i0__i2.csv").write_text("1,2,3,4\n" * 3)
    (mdir / "i1__i2.csv").write_text("")
    out = tmp_path / "manifest.jsonl"
    assert main(["curate", "--meta", str(tmp_path / "meta.json"), "--matches-dir", str(mdir),
                 "--dia-per-aoi", "2", "--sync-per-aoi", "1", "--out", str(out)]) == 0
    labels = [json.loads(x)["label"] for x in out.read_text().splitlines()]
    assert labels == ["Diachronic", "Diachronic", "Synchronic"]
