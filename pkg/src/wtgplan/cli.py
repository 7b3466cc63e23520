"""``wtgplan`` command line: build, simplify, analyze, plan, scenegen, export."""
from __future__ import annotations

import argparse
import configparser
import math
import sys
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .errors import (ConfigError, InputError, IoFailure, MalformedFile, NoNodeInRange, NoPath,
                     UnknownNode, WtgError)
from .ml_skimap import MAGIC, MapConfig, build_map, load_map
from .planner import PlannerConfig, plan
from .pointcloud_io import (PointCloud, load_point_cloud, write_colored_cloud, write_json_document,
                            write_line_set, write_point_cloud)
from .scenegen import KINDS, SceneSpec, generate
from .simplify import SimplifyParams, curvature_colors, map_curvatures, simplify_map
from .traversability import TraversabilityConfig, VehicleModel, compute_field
from .wtg import GRAPH_MAGIC, WtgConfig, build_wtg, load_graph

EXIT_OK, EXIT_NO_PATH, EXIT_INPUT, EXIT_CONFIG = 0, 2, 3, 4

# built-in vehicle used when no profile is given
DEFAULT_VEHICLE = {"W": 0.235, "L": 0.175, "R": 0.12, "H": 0.09, "max_tilt_deg": 30.0}

# flag dest -> (config section, key, type, default)
_SETTINGS = {
    "cell_size": ("map", "cell_size", float, 0.1),
    "level_gap": ("map", "level_gap", float, 0.3),
    "unit_scale": ("map", "unit_scale", float, 1.0),
    "origin": ("map", "origin", str, "0,0,0"),
    "a": ("simplify", "a", float, 900.0),
    "b": ("simplify", "b", float, 3.0),
    "c": ("simplify", "c", float, 1.0),
    "seed": ("simplify", "seed", int, 0),
    "c_max": ("wtg", "c_max", float, 0.1),
    "c_ref": ("traversability", "c_ref", float, None),
    "lam": ("planner", "lambda", float, 1.0),
    "snap_radius": ("planner", "snap_radius", float, 0.5),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _point(text: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected x,y,z, got {text!r}") from None
    if len(vals) != 3 or not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"expected three finite numbers x,y,z, got {text!r}")
    return np.array(vals)


def _load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return cp


def _resolve(args, name):
    """Flag value, else config-file value, else default."""
    section, key, typ, default = _SETTINGS[name]
    value = getattr(args, name, None)
    if value is not None:
        return value
    cp = args._config
    if cp.has_option(section, key):
        raw = cp.get(section, key)
        try:
            return typ(raw)
        except ValueError:
            raise ConfigError(f"config [{section}] {key}: bad value {raw!r}") from None
    return default


def _vehicle(args) -> VehicleModel:
    profile = args.vehicle
    if profile is None and args._config.has_option("vehicle", "profile"):
        # relative profile paths in a config file are relative to that file
        profile = FsPath(args.config).parent / args._config.get("vehicle", "profile")
    if profile:
        return VehicleModel.from_profile(profile)
    cp = args._config
    v = dict(DEFAULT_VEHICLE)
    if cp.has_section("vehicle"):
        for key in v:
            if cp.has_option("vehicle", key):
                try:
                    v[key] = float(cp.get("vehicle", key))
                except ValueError:
                    raise ConfigError(f"config [vehicle] {key} is not a number") from None
    return VehicleModel(v["W"], v["L"], v["R"], v["H"], math.radians(v["max_tilt_deg"]))


def _write_graph(g, path):
    if str(path).lower().endswith(".json"):
        write_json_document(g.to_document(), path)
    else:
        try:
            FsPath(path).write_bytes(g.to_bytes())
        except OSError as exc:
            raise IoFailure(f"{path}: {exc}") from exc


def _map_to_file(m, path):
    try:
        m.save(path)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


# ---- subcommands -----------------------------------------------------------

def cmd_build(args) -> int:
    cloud = load_point_cloud(args.input)
    scale = _resolve(args, "unit_scale")
    if scale != 1.0:
        cloud = cloud.scaled(scale)
    config = MapConfig(_resolve(args, "cell_size"), _resolve(args, "level_gap"),
                       tuple(_point(_resolve(args, "origin"))))
    m = build_map(cloud, config)
    _map_to_file(m, args.output)
    if args.export_ply:
        write_colored_cloud(PointCloud(m.points), _level_colors(m), args.export_ply)
    print(f"points={m.n_points} voxels={m.n_voxels} columns={m.n_columns} levels={m.n_levels} "
          f"multi_level_columns={m.multi_level_columns()}")
    return EXIT_OK


def _level_colors(m) -> np.ndarray:
    lvl = np.repeat(m.vox_level, np.diff(m.vox_start))
    palette = np.array([[200, 200, 200], [230, 120, 40], [40, 140, 230], [120, 200, 60], [200, 60, 160]])
    return palette[lvl % len(palette)]


def cmd_simplify(args) -> int:
    m = load_map(args.input)
    params = SimplifyParams(_resolve(args, "a"), _resolve(args, "b"), _resolve(args, "c"),
                            _resolve(args, "seed"))
    out = simplify_map(m, params)
    _map_to_file(out, args.output)
    if args.export_ply:
        curv = map_curvatures(m)
        colors = np.repeat(curvature_colors(curv), np.diff(m.vox_start), axis=0)
        write_colored_cloud(PointCloud(m.points), colors, args.export_ply)
    frac = out.n_points / m.n_points
    print(f"retained={out.n_points} input={m.n_points} fraction={frac:.6f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    m = load_map(args.input)
    vehicle = _vehicle(args)
    c_max = _resolve(args, "c_max")
    field = compute_field(m, vehicle, TraversabilityConfig(c_max=c_max, c_ref=_resolve(args, "c_ref")))
    g = build_wtg(m, field, WtgConfig(c_max))
    _write_graph(g, args.output)
    field_path = args.field or str(FsPath(args.output).with_suffix("")) + ".field.json"
    write_json_document(field.to_document(), field_path)
    max_cost = math.tan(vehicle.max_tilt)
    if args.export_ply:
        write_line_set(*g.line_set(max_cost), args.export_ply)
    if args.field_ply:
        pc = PointCloud(m.voxel_centers(m.lvl_surface_vox))
        write_colored_cloud(pc, field.colors(max_cost), args.field_ply)
    finite = np.isfinite(field.costs)
    print(f"nodes={g.n_nodes} edges={g.n_edges} finite_headings={int(finite.sum())} "
          f"blocked_headings={int((~finite).sum())}")
    return EXIT_OK


def cmd_plan(args) -> int:
    g = load_graph(args.input)
    if args.start is None or args.goal is None:
        raise ConfigError("--start and --goal are required")
    config = PlannerConfig(_resolve(args, "lam"), _resolve(args, "snap_radius"))
    try:
        path = plan(g, _point(args.start), _point(args.goal), config)
    except NoPath as exc:
        print(f"no path: {exc}", file=sys.stderr)
        return EXIT_NO_PATH
    if args.output:
        write_json_document(path.to_document(), args.output)
    if args.export_ply:
        n = len(path.node_ids)
        edges = np.column_stack([np.arange(n - 1), np.arange(1, n)]) if n > 1 else np.zeros((0, 2), int)
        write_line_set(path.positions, edges, np.tile([255, 0, 0], (len(edges), 1)), args.export_ply)
    print(f"start={list(path.start)} goal={list(path.goal)} nodes={len(path.node_ids)} "
          f"cost={path.cost:.9g} expanded={path.expanded}")
    return EXIT_OK


def _scene_params(items) -> dict:
    params = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"scene parameter must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        if "," in raw:
            params[key] = [float(v) for v in raw.split(",")]
        else:
            try:
                params[key] = float(raw)
            except ValueError:
                raise ConfigError(f"scene parameter {key} is not numeric") from None
    return params


def cmd_scenegen(args) -> int:
    seed = args.seed if args.seed is not None else _resolve(args, "seed")
    spec = SceneSpec(args.kind, density=args.density, noise=args.noise, seed=seed,
                     params=_scene_params(args.param))
    cloud, truth = generate(spec)
    out = args.out or args.output
    if not out:
        raise ConfigError("--out is required")
    write_point_cloud(cloud, out)
    if args.truth:
        write_json_document(truth, args.truth)
    print(f"kind={args.kind} points={len(cloud)}")
    return EXIT_OK


def cmd_export(args) -> int:
    try:
        with open(args.input, "rb") as fh:
            magic = fh.read(4)
    except OSError as exc:
        raise MalformedFile(f"{args.input}: {exc}") from exc
    as_json = str(args.output).lower().endswith(".json")
    if magic == MAGIC:
        m = load_map(args.input)
        if as_json:
            write_json_document(m.to_document(), args.output)
        else:
            write_colored_cloud(PointCloud(m.points), _level_colors(m), args.output)
    elif magic == GRAPH_MAGIC or as_json or magic[:1] == b"{":
        g = load_graph(args.input)
        if as_json:
            write_json_document(g.to_document(), args.output)
        else:
            w = g.weights
            write_line_set(*g.line_set(float(w.max()) if len(w) else 1.0), args.output)
    else:
        raise InputError(f"{args.input}: neither a map nor a graph file")
    print(f"wrote {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wtgplan", description=__doc__)
    p.add_argument("--version", action="version", version=f"wtgplan {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, output=True):
        sp.add_argument("--config", help="INI file; flags take precedence")
        sp.add_argument("--input", required=True)
        if output:
            sp.add_argument("--output", required=True)
        sp.add_argument("--export-ply", dest="export_ply")

    sp = sub.add_parser("build", help="voxelize a point cloud into a map")
    common(sp)
    sp.add_argument("--cell-size", dest="cell_size", type=float)
    sp.add_argument("--level-gap", dest="level_gap", type=float)
    sp.add_argument("--unit-scale", dest="unit_scale", type=float)
    sp.add_argument("--origin")
    sp.set_defaults(func=cmd_build)

    sp = sub.add_parser("simplify", help="curvature-driven point slimming")
    common(sp)
    sp.add_argument("--a", type=float)
    sp.add_argument("--b", type=float)
    sp.add_argument("--c", type=float)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_simplify)

    sp = sub.add_parser("analyze", help="traversability field and graph")
    common(sp)
    sp.add_argument("--vehicle")
    sp.add_argument("--c-max", dest="c_max", type=float)
    sp.add_argument("--c-ref", dest="c_ref", type=float)
    sp.add_argument("--field", help="field JSON path (default: next to the graph)")
    sp.add_argument("--field-ply", dest="field_ply")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("plan", help="A* between two points")
    sp.add_argument("--config")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output")
    sp.add_argument("--export-ply", dest="export_ply")
    sp.add_argument("--start")
    sp.add_argument("--goal")
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--snap-radius", dest="snap_radius", type=float)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("scenegen", help="synthetic terrain")
    sp.add_argument("kind", choices=KINDS)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--density", type=float, default=400.0)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--param", action="append", metavar="KEY=VALUE")
    sp.add_argument("--out")
    sp.add_argument("--output")
    sp.add_argument("--truth")
    sp.set_defaults(func=cmd_scenegen)

    sp = sub.add_parser("export", help="map or graph to PLY / JSON")
    common(sp)
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args._config = _load_config(getattr(args, "config", None))
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, NoNodeInRange, UnknownNode) as exc:
        print(f"input error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoPath as exc:
        print(f"no path: {exc}", file=sys.stderr)
        return EXIT_NO_PATH
    except WtgError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
