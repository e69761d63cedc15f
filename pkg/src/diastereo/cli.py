"""``diastereo`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Errors are reported as one JSON object on stderr. Every output raster gets
a sibling ``<name>.meta.json`` provenance record.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np

from . import curate as cur
from .dense_match import DenseConfig, block_match, load_disparity
from .errors import DiastereoError, IoError
from .evaluate import EvalReport, aggregate, dsm_mae
from .gt import compute_gt
from .plot import plot
from .raster import Raster, read_raster, write_raster
from .rectify import RectifyConfig, load_rectification, rectify_pair, save_rectification
from .rpc import parse_rpc, write_rpc
from .sparse_match import MatchSet, load_matches, save_matches
from .synth import SceneSpec, box_scene, exact_matches, make_scene, render, scene_camera
from .triangulate import AltitudeImage, grid_dsm, triangulate

log = logging.getLogger("diastereo")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def write_provenance(output, inputs, params: dict, stage: str) -> None:
    """Sibling ``<output>.meta.json`` with input hashes and parameters."""
    output = Path(output)
    record = {
        "stage": stage,
        "tool_version": _version(),
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "inputs": {str(p): sha256(p) for p in inputs if p and Path(p).is_file()},
        "output_sha256": sha256(output) if output.is_file() else None,
        "params": _jsonable(params),
    }
    Path(str(output) + ".meta.json").write_text(json.dumps(record, indent=1))


def _params(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "config")}


def _read(path) -> Raster:
    return read_raster(path)


def _dump_json(obj, path) -> None:
    text = json.dumps(_jsonable(obj), indent=1)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n")


# ------------------------------------------------------------- subcommands

def cmd_rectify(args):
    left, right = _read(args.left), _read(args.right)
    rpc_l, rpc_r = parse_rpc(args.rpc_left), parse_rpc(args.rpc_right)
    zavg, h_range = args.zavg, args.h_range
    if zavg is None or h_range is None:
        if args.dsm is None:
            raise UsageError("--zavg (or --dsm to derive it) is required")
        z = np.asarray(_read(args.dsm).band(0), dtype=float)
        z = z[np.isfinite(z)]
        if zavg is None:
            zavg = float(np.median(z))
        if h_range is None:
            h_range = (float(z.min()), float(z.max()))
    matches = load_matches(args.matches) if args.matches else "auto"
    res = rectify_pair(left, rpc_l, right, rpc_r, zavg, matches, RectifyConfig(), h_range=h_range)
    paths = save_rectification(res, args.out_dir)
    inputs = [args.left, args.right, args.rpc_left, args.rpc_right, args.matches, args.dsm]
    for p in paths[:2]:
        write_provenance(p, inputs, _params(args), "rectify")
    print(f"rectified {res.out_size[0]}x{res.out_size[1]} swapped={res.swapped} t={res.t:.3f} s={res.s:.3f}")


def _swap_note(rect, stage):
    log.debug("%s: using rectified cameras (swapped=%s)", stage, rect.swapped)


def cmd_gt_disp(args):
    rect = load_rectification(args.rect_dir, images=False)
    _swap_note(rect, "gt-disp")
    gt = compute_gt(rect, _read(args.dsm))
    write_raster(gt.disparity, args.out)
    inputs = [args.dsm, Path(args.rect_dir) / "meta.json"]
    write_provenance(args.out, inputs, _params(args) | {"n_failed": gt.n_failed}, "gt-disp")
    if args.confidence:
        write_raster(gt.confidence, args.confidence)
        write_provenance(args.confidence, inputs, _params(args), "gt-disp")
    d = np.asarray(gt.disparity.data, dtype=float)
    print(f"gt disparity range [{np.nanmin(d):.3f}, {np.nanmax(d):.3f}] px, {gt.n_failed} failed pixel(s)")


def cmd_match(args):
    rect = load_rectification(args.rect_dir)
    d_min, d_max = args.dmin, args.dmax
    if args.gt and (d_min is None or d_max is None):
        g = np.asarray(_read(args.gt).band(0), dtype=float)
        d_min = int(np.floor(np.nanmin(g))) - 2 if d_min is None else d_min
        d_max = int(np.ceil(np.nanmax(g))) + 2 if d_max is None else d_max
    cfg = DenseConfig(d_min=0 if d_min is None else d_min, d_max=128 if d_max is None else d_max,
                      window=args.window)
    disp = block_match(rect.rect_left, rect.rect_right, cfg)
    write_raster(disp, args.out)
    write_provenance(args.out, [Path(args.rect_dir) / "rect_left.dsrast", Path(args.rect_dir) / "rect_right.dsrast", args.gt],
                     _params(args) | {"d_min": cfg.d_min, "d_max": cfg.d_max}, "match")
    valid = np.isfinite(disp.data).mean()
    print(f"block matching d in [{cfg.d_min}, {cfg.d_max}]: {100 * valid:.1f}% valid")


def cmd_import_disp(args):
    disp = load_disparity(args.input, negate=args.negate, strict_unipolar=args.strict_unipolar)
    write_raster(disp, args.out)
    write_provenance(args.out, [args.input], _params(args), "import-disp")


def cmd_triangulate(args):
    rect = load_rectification(args.rect_dir, images=False)
    bounds = None if args.hmin is None or args.hmax is None else (args.hmin, args.hmax)
    alt = triangulate(load_disparity(args.disp), rect, h_bounds=bounds)
    write_raster(alt.raster, args.out)
    write_provenance(args.out, [args.disp, Path(args.rect_dir) / "meta.json"],
                     _params(args) | {"counts": alt.counts}, "triangulate")
    print(json.dumps(alt.counts))


def cmd_grid(args):
    rect = load_rectification(args.rect_dir, images=False)
    origin = None
    if args.ref:
        origin = _read(args.ref).crs
    alt = _read(args.alt)
    dsm = grid_dsm(alt, rect, cell=args.cell, agg=args.agg, origin=origin)
    write_raster(dsm, args.out)
    write_provenance(args.out, [args.alt, args.ref], _params(args), "grid")
    print(f"DSM {dsm.width}x{dsm.height} at {args.cell} m")


def cmd_eval(args):
    rep = dsm_mae(_read(args.pred), _read(args.ref), _read(args.veg) if args.veg else None,
                  args.margin, pair_id=args.pair_id or Path(args.pred).stem, aoi_id=args.aoi_id,
                  edge_band=args.edge_band)
    _dump_json(rep.to_dict(), args.json)
    print(f"MAE {rep.mae_m:.4f} m  RMSE {rep.rmse_m:.4f} m  completeness {rep.completeness:.4f}")


def cmd_eval_agg(args):
    reports = []
    for p in sorted(Path(args.reports).glob("*.json")):
        d = json.loads(p.read_text())
        if "mae_m" not in d:
            continue
        r = EvalReport.from_dict(d)
        if r.aoi_id is None:
            r.aoi_id = p.parent.name if args.aoi_from_dir else r.pair_id.split("_")[0]
        reports.append(r)
    scores, mean, std = aggregate(reports)
    summary = {"aois": [s.to_dict() for s in scores], "mean_m": mean, "std_m": std, "n_aoi": len(scores)}
    _dump_json(summary, args.json)
    print(f"{mean:.4f} ± {std:.4f} m over {len(scores)} AOI(s)")


def cmd_curate(args):
    images = cur.load_image_meta(args.meta)
    cfg = cur.CurateConfig(args.gap_thresh, args.match_thresh, args.per_megapixel)
    quotas = {"dia_per_aoi": args.dia_per_aoi, "sync_per_aoi": args.sync_per_aoi}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", cur.InsufficientPairs)
        labels = cur.build_manifest(images, args.matches_dir, quotas, args.seed, cfg)
    for w in caught:
        print(json.dumps({"warning": w.category.__name__, "message": str(w.message)}), file=sys.stderr)
    cur.write_manifest(labels, args.out)
    n_dia = sum(lab.label == cur.DIACHRONIC for lab in labels)
    print(f"{len(labels)} pair(s): {n_dia} diachronic, {len(labels) - n_dia} synchronic")


def cmd_synth(args):
    if args.spec:
        spec = SceneSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = box_scene(args.seed)
    scene = make_scene(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_raster(scene.dsm, out / "dsm.dsrast")
    cams, renders = [], []
    for k, name in enumerate(("left", "right")[: len(spec.cameras)]):
        rpc, size = scene_camera(spec, k)
        rend = render(scene, rpc, size, camera=k)
        write_raster(rend.image, out / f"{name}.dsrast")
        write_raster(rend.altitude, out / f"{name}_alt.dsrast")
        write_rpc(rpc, out / f"{name}.rpc.json")
        cams.append((rpc, size))
        renders.append(rend)
    if len(cams) == 2:
        m = exact_matches(renders[0], cams[0][0], cams[1][0], n=200, seed=args.seed, size_b=cams[1][1])
        save_matches(MatchSet(m), out / "matches.csv")
    for p in out.glob("*.dsrast"):
        write_provenance(p, [args.spec], _params(args), "synth")
    print(f"scene written to {out}")


def cmd_plot(args):
    vrange = tuple(args.range) if args.range else None
    plot(_read(args.input), args.out, args.colormap, vrange)


PIPELINE_KEYS = ("left", "right", "rpc_left", "rpc_right", "dsm", "ref", "veg", "zavg", "h_range",
                 "matches", "disparity", "negate", "cell", "agg", "margin", "edge_band", "out_dir")


def cmd_pipeline(args):
    cfg = {"disparity": "match", "negate": False, "cell": 0.5, "agg": "median", "margin": 32, "edge_band": 0,
           "matches": None, "zavg": None, "h_range": None, "veg": None, "dsm": None, "ref": None}
    if args.config:
        cfg |= json.loads(Path(args.config).read_text())
    for k in PIPELINE_KEYS:
        v = getattr(args, k, None)
        if v not in (None, False):
            cfg[k] = v
    missing = [k for k in ("left", "right", "rpc_left", "rpc_right", "out_dir") if not cfg.get(k)]
    if missing:
        raise UsageError(f"pipeline config lacks {', '.join(missing)}")
    base = Path(args.config).parent if args.config else Path(".")

    def path(key):
        v = cfg.get(key)
        return None if v is None else str(v if Path(v).is_absolute() else base / v)

    out = Path(cfg["out_dir"])
    rect_dir = out / "rect"
    ref = path("ref") or path("dsm")
    steps = [["rectify", "--left", path("left"), "--right", path("right"), "--rpc-left", path("rpc_left"),
              "--rpc-right", path("rpc_right"), "--out-dir", str(rect_dir)]]
    if cfg["zavg"] is not None:
        steps[0] += ["--zavg", str(cfg["zavg"])]
    if cfg["h_range"] is not None:
        steps[0] += ["--h-range", *map(str, cfg["h_range"])]
    if path("dsm"):
        steps[0] += ["--dsm", path("dsm")]
    if cfg["matches"]:
        steps[0] += ["--matches", path("matches")]
    disp = out / "disp.pfm"
    source = cfg["disparity"]
    if source == "match":
        step = ["match", "--rect-dir", str(rect_dir), "--out", str(disp)]
        if path("dsm"):
            steps.append(["gt-disp", "--rect-dir", str(rect_dir), "--dsm", path("dsm"), "--out", str(out / "gt_disp.pfm")])
            step += ["--gt", str(out / "gt_disp.pfm")]
        steps.append(step)
    elif source == "gt":
        if not path("dsm"):
            raise UsageError("disparity 'gt' needs a dsm")
        steps.append(["gt-disp", "--rect-dir", str(rect_dir), "--dsm", path("dsm"), "--out", str(disp)])
    else:
        steps.append(["import-disp", "--in", path("disparity"), "--out", str(disp)] + (["--negate"] if cfg["negate"] else []))
    steps.append(["triangulate", "--rect-dir", str(rect_dir), "--disp", str(disp), "--out", str(out / "alt.dsrast")])
    grid = ["grid", "--alt", str(out / "alt.dsrast"), "--rect-dir", str(rect_dir), "--cell", str(cfg["cell"]),
            "--agg", cfg["agg"], "--out", str(out / "dsm.dsrast")]
    if ref:
        grid += ["--ref", ref]
    steps.append(grid)
    if ref:
        ev = ["eval", "--pred", str(out / "dsm.dsrast"), "--ref", ref, "--margin", str(cfg["margin"]),
              "--edge-band", str(cfg["edge_band"]), "--json", str(out / "report.json")]
        if path("veg"):
            ev += ["--veg", path("veg")]
        steps.append(ev)
    out.mkdir(parents=True, exist_ok=True)
    for argv in steps:
        log.info("pipeline: %s", " ".join(argv))
        _dispatch(build_parser().parse_args(argv))


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diastereo", description="Multi-date satellite stereo pipeline.")
    p.add_argument("--threads", type=int, default=int(os.environ.get("DIASTEREO_THREADS", "1")),
                   help="worker threads (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file of flag values; command-line flags win")
        sp.set_defaults(func=func)
        return sp

    sp = add("rectify", cmd_rectify, "rectify a pair")
    sp.add_argument("--left", required=True)
    sp.add_argument("--right", required=True)
    sp.add_argument("--rpc-left", required=True)
    sp.add_argument("--rpc-right", required=True)
    sp.add_argument("--zavg", type=float)
    sp.add_argument("--h-range", type=float, nargs=2, metavar=("HMIN", "HMAX"))
    sp.add_argument("--dsm", help="DSM giving the default z_avg (median) and altitude range")
    sp.add_argument("--matches", help="CSV of matches in original image coordinates")
    sp.add_argument("--out-dir", required=True)

    sp = add("gt-disp", cmd_gt_disp, "ground-truth disparity from a DSM")
    sp.add_argument("--rect-dir", required=True)
    sp.add_argument("--dsm", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--confidence")

    sp = add("match", cmd_match, "dense block matching")
    sp.add_argument("--rect-dir", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dmin", type=int)
    sp.add_argument("--dmax", type=int)
    sp.add_argument("--window", type=int, default=9)
    sp.add_argument("--gt", help="disparity map setting the default search range")

    sp = add("import-disp", cmd_import_disp, "import an external disparity map")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--negate", action="store_true")
    sp.add_argument("--strict-unipolar", action="store_true")

    sp = add("triangulate", cmd_triangulate, "altitude image from disparities")
    sp.add_argument("--rect-dir", required=True)
    sp.add_argument("--disp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--hmin", type=float)
    sp.add_argument("--hmax", type=float)

    sp = add("grid", cmd_grid, "grid an altitude image into a DSM")
    sp.add_argument("--alt", required=True)
    sp.add_argument("--rect-dir", required=True)
    sp.add_argument("--cell", type=float, default=0.5)
    sp.add_argument("--agg", choices=("median", "max", "mean"), default="median")
    sp.add_argument("--ref", help="raster whose crs origin the grid should share")
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "DSM accuracy against a reference")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--veg")
    sp.add_argument("--margin", type=int, default=32)
    sp.add_argument("--edge-band", type=int, default=0, help="also skip cells this close to reference jumps")
    sp.add_argument("--pair-id")
    sp.add_argument("--aoi-id")
    sp.add_argument("--json")

    sp = add("eval-agg", cmd_eval_agg, "aggregate evaluation reports")
    sp.add_argument("--reports", required=True, help="directory of report JSON files")
    sp.add_argument("--aoi-from-dir", action="store_true")
    sp.add_argument("--json")

    sp = add("curate", cmd_curate, "label pairs and write a manifest")
    sp.add_argument("--meta", required=True)
    sp.add_argument("--matches-dir", required=True)
    sp.add_argument("--dia-per-aoi", type=int, default=30)
    sp.add_argument("--sync-per-aoi", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--gap-thresh", type=float, default=30.0)
    sp.add_argument("--match-thresh", type=float, default=40.0)
    sp.add_argument("--per-megapixel", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("synth", cmd_synth, "write a synthetic scene")
    sp.add_argument("--spec", help="scene JSON (default: random box scene)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", required=True)

    sp = add("plot", cmd_plot, "colormapped PGM/PPM rendering")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--colormap", choices=("gray", "turbo"), default="gray")
    sp.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))

    sp = add("pipeline", cmd_pipeline, "rectify, match, triangulate, grid and evaluate")
    for k in PIPELINE_KEYS:
        flag = "--" + k.replace("_", "-")
        if k == "negate":
            sp.add_argument(flag, action="store_true")
        elif k in ("cell", "zavg"):
            sp.add_argument(flag, type=float)
        elif k in ("margin", "edge_band"):
            sp.add_argument(flag, type=int)
        elif k == "h_range":
            sp.add_argument(flag, type=float, nargs=2)
        else:
            sp.add_argument(flag)
    return p


def _config_argv(sub: argparse.ArgumentParser, conf: dict) -> list[str]:
    """Flags equivalent to a config mapping for subparser ``sub``."""
    actions = {a.dest: a for a in sub._actions if a.option_strings}
    out = []
    for k, v in conf.items():
        action = actions.get(k.replace("-", "_"))
        if action is None or action.dest == "config":
            raise UsageError(f"unknown config key {k!r}")
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            out += [flag] if v else []
        elif isinstance(v, (list, tuple)):
            out += [flag, *map(str, v)]
        elif v is not None:
            out += [flag, str(v)]
    return out


def _apply_config(parser: argparse.ArgumentParser, argv):
    """Parse argv; values from a subcommand's --config fill unset flags.

    Config entries are turned into flags placed before the command-line
    ones, so that the latter win.
    """
    subs = parser._subparsers._group_actions[0].choices
    k = next((i for i, a in enumerate(argv) if a in subs), None)
    conf_path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            conf_path = argv[i + 1]
        elif a.startswith("--config="):
            conf_path = a.split("=", 1)[1]
    if k is not None and conf_path and argv[k] != "pipeline":
        conf = json.loads(Path(conf_path).read_text())
        argv = argv[:k + 1] + _config_argv(subs[argv[k]], conf) + argv[k + 1:]
    return parser.parse_args(argv)


def _dispatch(args) -> None:
    args.func(args)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as e:
        print(json.dumps({"error": "UsageError", "message": str(e)}), file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except (OSError, json.JSONDecodeError) as e:
        print(json.dumps({"error": "IoError", "message": str(e)}), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    os.environ.setdefault("DIASTEREO_THREADS", str(args.threads))
    try:
        _dispatch(args)
    except UsageError as e:
        print(json.dumps({"error": "UsageError", "message": str(e)}), file=sys.stderr)
        return 1
    except DiastereoError as e:
        print(json.dumps(e.to_json()), file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(json.dumps(IoError(str(e)).to_json()), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
