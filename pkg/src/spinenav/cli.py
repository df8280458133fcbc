"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Machine-readable results go to stdout; progress and errors go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ._io import atomic_write_bytes, atomic_write_text
from .geometry import STLParseError, mesh_bounds, parse_stl, union_bounds, write_stl
from .optimizer import GridSpec, OptimizationError, export_best, optimize
from .simulator import Scenario, run_trials, summarize
from .smoothing import SmoothingParams, build_knn_graph, laplacian_smooth
from .tracking import CameraIntrinsics, MarkerSpec, TrackerConfig, parse_observations, replay
from .voxel import DEFAULT_RESOLUTION_MM, dice_shell, voxelize_surface

log = logging.getLogger("spinenav")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 2."""


def _existing(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    return p


def _read_mesh(path):
    return parse_stl(_existing(path).read_bytes())


def _read_json(path, what):
    try:
        return json.loads(_existing(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path}: invalid JSON ({exc})") from exc


def cmd_smooth(args):
    mesh = _read_mesh(args.input)
    try:
        params = SmoothingParams(args.k, args.iters, args.alpha)
        graph = build_knn_graph(mesh, params.k)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = laplacian_smooth(mesh, params, graph)
    atomic_write_bytes(args.output, write_stl(out, args.format))
    print(f"vertices={out.n_vertices} k={params.k} iterations={params.iterations} alpha={params.alpha:g}")
    return EXIT_OK


def cmd_dice(args):
    a, b = _read_mesh(args.a), _read_mesh(args.b)
    if not args.resolution > 0:
        raise UsageError("--resolution must be positive")
    bounds = union_bounds(mesh_bounds(a), mesh_bounds(b))
    d = dice_shell(voxelize_surface(a, bounds, args.resolution),
                   voxelize_surface(b, bounds, args.resolution))
    print(f"{d:.4f}")
    return EXIT_OK


def cmd_optimize(args):
    gt, mri = _read_mesh(args.gt), _read_mesh(args.mri)
    try:
        spec = GridSpec.from_dict(_read_json(args.config, "grid config"))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"grid config {args.config}: {exc}") from exc
    try:
        results = optimize(gt, mri, spec, workers=args.workers)
    except OptimizationError as exc:
        # k >= vertex count and friends are parameter problems, not crashes
        raise UsageError(str(exc)) from exc
    log.info("evaluated %d parameter triplets", len(results))
    paths = export_best(results, args.out_dir, spec.top_n, args.format)
    for p in paths:
        print(p.name)
    return EXIT_OK


def _marker_setup(d):
    cam = CameraIntrinsics.from_dict(d["camera"])
    specs = {int(m["id"]): MarkerSpec(int(m["id"]), float(m["side_length_mm"])) for m in d["markers"]}
    return cam, specs


def cmd_track(args):
    try:
        cam, specs = _marker_setup(_read_json(args.markers, "marker file"))
        config = TrackerConfig(**_read_json(args.config, "tracker config")) if args.config else TrackerConfig()
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad marker/tracker configuration: {exc}") from exc
    with open(_existing(args.observations)) as fh:
        observations = parse_observations(fh)
    records = replay(observations, specs, cam, config)
    atomic_write_text(args.out, "".join(json.dumps(r) + "\n" for r in records))
    log.info("%d observations in, %d records out", len(observations), len(records))
    return EXIT_OK


def cmd_simulate(args):
    try:
        sc = Scenario.from_dict(_read_json(args.scenario, "scenario"))
        changes = {}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.trials is not None:
            changes["trials"] = args.trials
        if changes:
            sc = sc.with_(**changes)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"scenario {args.scenario}: {exc}") from exc
    report = summarize(run_trials(sc), sc.rings, mode=sc.guidance.value, seed=sc.seed)
    atomic_write_text(args.report, report.to_json())
    print(f"{report.mode}: high-accuracy rate {report.high_accuracy_rate:.1f}%, "
          f"average deviation {report.average_deviation:.2f} mm ({report.trials} trials)")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="spinenav", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("smooth", help="k-NN Laplacian smoothing of an STL mesh")
    s.add_argument("--input", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--iters", type=int, required=True)
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--format", choices=("binary", "ascii"), default="binary")
    s.set_defaults(func=cmd_smooth)

    s = sub.add_parser("dice", help="surface-shell Dice of two STL meshes")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--resolution", type=float, default=DEFAULT_RESOLUTION_MM)
    s.set_defaults(func=cmd_dice)

    s = sub.add_parser("optimize", help="grid-search smoothing parameters")
    s.add_argument("--gt", required=True)
    s.add_argument("--mri", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--format", choices=("binary", "ascii"), default="binary")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("track", help="replay a marker observation stream")
    s.add_argument("--observations", required=True)
    s.add_argument("--markers", required=True, help="JSON {camera: {...}, markers: [{id, side_length_mm}]}")
    s.add_argument("--config", help="JSON {t_miss, beta, auto_disable}")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("simulate", help="run seeded insertion trials")
    s.add_argument("--scenario", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--trials", type=int)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"spinenav {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (STLParseError, ValueError, OSError) as exc:
        print(f"spinenav {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
