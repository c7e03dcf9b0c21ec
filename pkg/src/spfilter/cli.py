"""Command-line entry point: ``spf <command> [options]``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from pathlib import Path

import numpy as np

logger = logging.getLogger("spfilter")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
CONFIG_ENV = "SPF_CONFIG"


class InputError(ValueError):
    pass


def _predictor(spec: str, intr):
    from .filter import HeuristicPredictor
    from .training import TinyConvPredictor

    if spec == "heuristic":
        return HeuristicPredictor(intr)
    if spec.startswith("model:"):
        return TinyConvPredictor.load(spec[len("model:"):])
    raise InputError(f"unknown predictor {spec!r}; use 'heuristic' or 'model:<path>'")


def _frame_dirs(manifest):
    from .labels import read_manifest

    dirs = read_manifest(manifest)
    if not dirs:
        raise InputError(f"{manifest}: manifest lists no frames")
    return dirs


# -- commands ---------------------------------------------------------------------------

def cmd_synth(args):
    from .pipeline import synthesize_dataset
    from .synthetic import SceneSpec, load_scene_spec

    scene_cfg = args.scene or args.config
    spec = load_scene_spec(scene_cfg) if scene_cfg else SceneSpec()
    if args.seed is not None:
        spec = _replace(spec, seed=args.seed)
    out = synthesize_dataset(spec, args.out, frame_stride=args.frame_stride, n_jobs=args.jobs)
    print(f"wrote dataset to {out}")


def _replace(obj, **kw):
    from dataclasses import replace

    return replace(obj, **kw)


def cmd_footholds(args):
    from .footholds import WindowParams, extract_footholds, read_trajectories
    from .footholds import FootholdSet
    from .geometry import PointCloud
    from .io import write_ply
    from .pipeline import write_footholds_csv

    params = WindowParams(args.t_big, args.t_small, args.r_t)
    fh = FootholdSet.union(extract_footholds(tr, params) for tr in read_trajectories(args.trajectory))
    out = Path(args.out)
    if out.suffix == ".csv":
        write_footholds_csv(out, fh)
    else:
        write_ply(out, PointCloud(fh.points, "world"))
    print(f"{len(fh)} footholds -> {out}")


def _read_footholds(path):
    from .footholds import FootholdSet
    from .io import read_ply
    from .pipeline import read_footholds_csv

    if str(path).endswith(".csv"):
        return read_footholds_csv(path)
    return FootholdSet(read_ply(path).points)


def cmd_surface(args):
    from .geometry import GridSpec
    from .gp import GpParams, TilingConfig, reconstruct_surface
    from .io import write_surface

    fh = _read_footholds(args.footholds)
    if len(fh) == 0:
        raise InputError("no footholds to reconstruct from")
    if args.bounds:
        x0, y0, x1, y1 = args.bounds
    else:
        (x0, y0), (x1, y1) = fh.points[:, :2].min(0) - 0.5, fh.points[:, :2].max(0) + 0.5
    res = args.resolution
    grid = GridSpec((x0, y0), res, (int(np.ceil((y1 - y0) / res)), int(np.ceil((x1 - x0) / res))))
    surf = reconstruct_surface(fh, TilingConfig(args.tile_size, args.overlap), GpParams(args.lengthscale, args.noise),
                               grid, prerasterize=res if args.prerasterize else None, n_jobs=args.jobs)
    write_surface(args.out, surf)
    print(f"surface {surf.shape[1]}x{surf.shape[0]} cells -> {args.out}")


def cmd_labels(args):
    from .io import read_meta, read_surface, write_raster
    from .labels import generate_ssde_label

    surface = read_surface(args.surface)
    dirs = _frame_dirs(args.manifest)
    for d in dirs:
        pose, intr, _ = read_meta(Path(d) / "meta.txt")
        lab = generate_ssde_label(surface, intr, pose, tau_max=args.tau_max)
        write_raster(Path(d) / "ssde.spfr", [lab.depth, lab.variance, lab.valid.astype(float)])
    print(f"labeled {len(dirs)} frames")


def cmd_filter(args):
    from .filter import filter_pointcloud
    from .io import read_meta, read_ply, read_raster, write_ply

    cloud = read_ply(args.input)
    pose, intr, _ = read_meta(args.pose)
    rgb = np.moveaxis(read_raster(args.rgb), 0, -1).astype(float)
    if rgb.shape[:2] != intr.shape:
        raise InputError(f"rgb is {rgb.shape[1]}x{rgb.shape[0]} but intrinsics are {intr.width}x{intr.height}")
    out = filter_pointcloud(cloud, rgb, intr, pose, _predictor(args.predictor, intr))
    write_ply(args.output, out.cloud)
    print(f"{len(out.cloud)} points ({out.n_in_view} in view) -> {args.output}")


def cmd_train(args):
    from .labels import load_sample
    from .training import TinyConvPredictor

    samples = [load_sample(d) for d in _frame_dirs(args.manifest)]
    seed = 0 if args.seed is None else args.seed
    model = TinyConvPredictor(epochs=args.epochs, learning_rate=args.lr, seed=seed, hidden=args.hidden)
    model.fit(samples)
    model.save(args.out)
    h = model.history_
    print(f"L_total {h[0].L_total:.6g} -> {h[-1].L_total:.6g} over {args.epochs} steps; model -> {args.out}")


def _replay(args, modes):
    from .io import read_surface
    from .pipeline import load_frame, read_footholds_csv, replay_maps

    dirs = _frame_dirs(args.manifest)
    root = Path(args.manifest).parent
    frames = [load_frame(d) for d in dirs]
    intr = frames[0].intrinsics
    truth_path = Path(args.truth) if getattr(args, "truth", None) else root / "truth_surface.spfr"
    truth = read_surface(truth_path) if truth_path.exists() else (lambda x, y: np.full(np.shape(x), np.nan))
    fh = None
    if "foothold" in modes:
        fh_path = Path(args.footholds) if args.footholds else root / "footholds.csv"
        fh = _read_footholds(fh_path)
    pred = _predictor(args.predictor, intr)
    return replay_maps(frames, intr, truth, modes, pred, fh, map_size=args.size, resolution=args.resolution)


def cmd_map(args):
    from .mapping import estimate_traversability, export_map_csv, export_map_raster

    _, maps = _replay(args, (args.filter,))
    emap = maps.get(args.filter)
    if emap is None:
        raise InputError("no map was produced (is the foothold set empty before every frame?)")
    trav = estimate_traversability(emap) if np.any(emap.valid) else None
    export_map_raster(args.out, emap, trav)
    if args.csv:
        export_map_csv(args.csv, emap, trav)
    print(f"{args.filter} map, {int(emap.valid.sum())} valid cells -> {args.out}")


def cmd_eval(args):
    from .mapping import export_error_csv
    from .metrics import MetricReport, write_reports

    result, _ = _replay(args, (args.filter,))
    acc = result.accumulators[args.filter]
    rmse = acc.total_rmse()
    if not np.isfinite(rmse):
        raise InputError("no map cell overlapped the ground truth")
    reports = [MetricReport(rmse=rmse, n_pixels=int(acc.count.sum()), name=f"{args.filter}-map")]
    if args.filter in ("raw", "spf"):
        from .pipeline import depth_reports

        frames = _frame_dirs(args.manifest)
        raw, filt = depth_reports(frames, _predictor(args.predictor, None) if args.predictor != "heuristic" else None,
                                  max_distance=args.max_distance)
        reports.append(raw if args.filter == "raw" else filt)
    for rep in reports:
        print(rep.summary())
    if args.out:
        write_reports(args.out, reports)
    if args.error_map:
        export_error_csv(args.error_map, acc)


def cmd_report(args):
    from .io import read_csv, write_csv

    header, rows = None, []
    for p in args.inputs:
        h, r = read_csv(p)
        if header is None:
            header = h
        elif h != header:
            raise InputError(f"{p}: column mismatch")
        rows.extend(r)
    if header is None:
        raise InputError("no reports given")
    write_csv(args.out, header, rows)
    for r in rows:
        print(", ".join(r))


# -- parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spf", description="Semantic pointcloud filtering toolkit")
    p.add_argument("--config", help=f"INI file with per-command defaults (or ${CONFIG_ENV})")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None, help="parallel workers")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--scene", help="scene description file (INI)")
    s.add_argument("--out", required=True)
    s.add_argument("--frame-stride", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("footholds", help="extract footholds from foot trajectories")
    s.add_argument("--trajectory", required=True, help="CSV t,foot_id,x,y,z")
    s.add_argument("--out", required=True, help=".ply or .csv")
    s.add_argument("--t-big", type=float, default=1.5)
    s.add_argument("--t-small", type=float, default=0.07)
    s.add_argument("--r-t", type=float, default=0.015)
    s.set_defaults(func=cmd_footholds)

    s = sub.add_parser("surface", help="reconstruct the support surface from footholds")
    s.add_argument("--footholds", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--resolution", type=float, default=0.04)
    s.add_argument("--lengthscale", type=float, default=0.3)
    s.add_argument("--noise", type=float, default=0.02)
    s.add_argument("--tile-size", type=float, default=2.0)
    s.add_argument("--overlap", type=float, default=0.5)
    s.add_argument("--bounds", type=float, nargs=4, metavar=("XMIN", "YMIN", "XMAX", "YMAX"))
    s.add_argument("--prerasterize", action=argparse.BooleanOptionalAction, default=True)
    s.set_defaults(func=cmd_surface)

    s = sub.add_parser("labels", help="raycast SSDE labels for every frame of a manifest")
    s.add_argument("--surface", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--tau-max", type=float, default=0.03)
    s.set_defaults(func=cmd_labels)

    s = sub.add_parser("filter", help="filter one pointcloud")
    s.add_argument("--input", required=True, help="PLY cloud")
    s.add_argument("--rgb", required=True, help="SPFR rgb raster")
    s.add_argument("--pose", required=True, help="frame meta file with camera pose and intrinsics")
    s.add_argument("--predictor", default="heuristic")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("train", help="train the tiny predictor")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--hidden", type=int, default=16)
    s.set_defaults(func=cmd_train)

    for name, func, helptext in (("map", cmd_map, "build an elevation map by replaying frames"),
                                 ("eval", cmd_eval, "accumulate map error against the truth surface")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--manifest", required=True)
        s.add_argument("--filter", choices=("raw", "smooth", "spf", "foothold"), default="spf")
        s.add_argument("--predictor", default="heuristic")
        s.add_argument("--footholds", help="foothold CSV for the foothold mode")
        s.add_argument("--size", type=float, default=8.0)
        s.add_argument("--resolution", type=float, default=0.04)
        if name == "map":
            s.add_argument("--out", required=True, help="SPFR raster")
            s.add_argument("--csv", help="also write x,y,height,variance,score")
        else:
            s.add_argument("--truth", help="truth surface (default truth_surface.spfr next to the manifest)")
            s.add_argument("--out", help="MetricReport CSV")
            s.add_argument("--error-map", help="per-cell error CSV")
            s.add_argument("--max-distance", type=float, default=5.0, help="depth-metric radius (m)")
        s.set_defaults(func=func)

    s = sub.add_parser("report", help="concatenate MetricReport CSVs")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    """Section ``[<command>]`` of the config file supplies option defaults."""
    # only --config and the command name are needed here; the subcommand's
    # required options may come from the file itself
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in rest if a in sub.choices), None)
    path = known.config or os.environ.get(CONFIG_ENV)
    if not path or command is None:
        return
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise InputError(f"config file {path} not found")
    if cp.has_section(command):
        sp = sub.choices[command]
        dests = {a.dest: a for a in sp._actions}
        values = {}
        for k, v in cp.items(command):
            dest = k.replace("-", "_")
            if dest not in dests:
                raise InputError(f"config [{command}] has unknown option {k!r}")
            a = dests[dest]
            values[dest] = a.type(v) if a.type else v
        sp.set_defaults(**values)
        for a in sp._actions:
            if a.dest in values:
                a.required = False


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    if args.config is None and os.environ.get(CONFIG_ENV):
        args.config = os.environ[CONFIG_ENV]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (FloatingPointError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
