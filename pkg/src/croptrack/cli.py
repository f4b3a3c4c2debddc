"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace

from . import fitting, synth, sweep
from .kalman import DEFAULT_Q, DEFAULT_R, SingularInnovationError
from .imaging import DEFAULT_MEDIAN_RADIUS, DEFAULT_THRESHOLD
from .tracker import (InitializationError, KalmanConfig, TrackerConfig, track_video,
                      write_track_csv, write_track_json)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("croptrack")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def unit_float(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return v


def multiples_list(text):
    """``0.5:9.5:0.5`` (inclusive range) or ``0.5,1,2``."""
    try:
        if ":" in text:
            lo, hi, step = (float(p) for p in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            n = int(math.floor((hi - lo) / step + 1e-9))
            values = [round(lo + k * step, 10) for k in range(n + 1)]
        else:
            values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad multiples grid: {text!r}")
    if not values or any(not v > 0 for v in values):
        raise argparse.ArgumentTypeError(f"multiples must be non-empty and > 0: {text!r}")
    return values


def g6(v):
    return "nan" if v is None else f"{v:.6g}"


# --- config files ------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _convert(action, value):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        truthy = value.lower() in ("1", "true", "yes", "on")
        if not truthy and value.lower() not in ("0", "false", "no", "off"):
            raise UsageError(f"{action.dest}: expected a boolean, got {value!r}")
        return truthy if isinstance(action, argparse._StoreTrueAction) else not truthy
    conv = action.type or str
    try:
        if action.nargs not in (None, "?") or isinstance(action, argparse._AppendAction):
            return [conv(p) for p in value.replace(",", " ").split()]
        return conv(value)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"{action.dest}: {exc}")


def apply_config(subparser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in subparser._actions if a.option_strings}
    defaults = {}
    for key, value in values.items():
        if key not in actions or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} for '{subparser.prog}'")
        defaults[key] = _convert(actions[key], value)
    subparser.set_defaults(**defaults)


# --- shared option groups ----------------------------------------------------

def _add_tracker_flags(p):
    g = p.add_argument_group("tracker")
    g.add_argument("--threshold", type=unit_float, default=DEFAULT_THRESHOLD,
                   help="red-difference threshold (default %(default)s)")
    g.add_argument("--median-radius", type=positive_int, default=DEFAULT_MEDIAN_RADIUS,
                   help="median filter radius in pixels (default %(default)s)")
    g.add_argument("--q", type=float, default=DEFAULT_Q, help="process noise intensity")
    g.add_argument("--r", type=positive_float, default=DEFAULT_R, help="measurement noise variance")
    g.add_argument("--max-init-frames", type=positive_int, default=50)
    g.add_argument("--gate", type=positive_float, default=None,
                   help="reject detections farther than this from the prediction (px)")
    g.add_argument("--no-timing", action="store_true",
                   help="record elapsed time as 0 so every output is reproducible byte for byte")


def _tracker_config(args, multiple=2.0, full_frame=False):
    if args.q < 0:
        raise UsageError(f"--q must be >= 0, got {args.q}")
    return TrackerConfig(
        window_multiple=multiple,
        detect_threshold=args.threshold,
        median_radius=args.median_radius,
        kalman=KalmanConfig(q=args.q, r=args.r),
        max_init_frames=args.max_init_frames,
        full_frame=full_frame,
        gate=args.gate,
        timing=not args.no_timing,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="croptrack",
                     description="Kalman-predicted search-window tracking and window-size analysis.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", metavar="FILE", help="key=value defaults; flags override")
        return p

    p = add("synth", "render a synthetic scene to numbered frames plus truth.csv")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", help="one of: " + ", ".join(synth.presets()))
    src.add_argument("--spec", metavar="FILE", help="scene spec as JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the scene seed")
    p.add_argument("--frames", type=positive_int, default=None, help="override the frame count")
    p.add_argument("--format", choices=("ppm", "png"), default="ppm")

    p = add("track", "track the red object through a scene directory")
    p.add_argument("scene_dir")
    p.add_argument("--window-multiple", type=positive_float, default=2.0)
    p.add_argument("--full-frame", action="store_true", help="search the whole frame every step")
    p.add_argument("--out", default=None, help="output directory (default SCENE_DIR/track)")
    _add_tracker_flags(p)

    p = add("sweep", "sweep window multiples over scenes, fit the curves, report the optimum")
    p.add_argument("--preset", action="append", default=None,
                   help="preset scene (repeatable; default all presets when no --scene)")
    p.add_argument("--scene", action="append", default=None, help="scene directory (repeatable)")
    p.add_argument("--multiples", type=multiples_list, default=list(sweep.DEFAULT_MULTIPLES),
                   help="grid as lo:hi:step or a comma list (default 0.5:9.5:0.5)")
    p.add_argument("--trials", type=positive_int, default=sweep.DEFAULT_TRIALS)
    p.add_argument("--frames", type=positive_int, default=300, help="frames per preset scene")
    p.add_argument("--seed", type=int, default=0, help="offset added to every preset seed")
    p.add_argument("--jobs", type=positive_int, default=1)
    p.add_argument("--cost-metric", choices=sweep.COST_METRICS, default="pixels")
    p.add_argument("--range", type=float, nargs=2, default=list(sweep.DEFAULT_RANGE),
                   metavar=("LO", "HI"))
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action="store_true", help="also render figures into OUT/figures")
    _add_tracker_flags(p)

    p = add("fit", "fit poly5 or exp to the first two columns of a CSV with a header row")
    p.add_argument("csv_file")
    p.add_argument("--model", choices=("poly5", "exp"), required=True)
    p.add_argument("--x-col", default=None, help="x column name (default first column)")
    p.add_argument("--y-col", default=None, help="y column name (default second column)")
    p.add_argument("--out", default=None, help="write the JSON here instead of stdout")

    p = add("optimum", "intersection and argmin of a cost polynomial and an error exponential")
    p.add_argument("--poly", type=float, nargs="+", default=list(fitting.REFERENCE_COST_COEFFS),
                   metavar="A", help="coefficients a0 a1 ... (default: reference values)")
    p.add_argument("--exp", type=float, nargs=2, default=list(fitting.REFERENCE_ERROR_PARAMS),
                   metavar=("A", "B"))
    p.add_argument("--range", type=float, nargs=2, default=list(sweep.DEFAULT_RANGE),
                   metavar=("LO", "HI"))
    p.add_argument("--grid-step", type=positive_float, default=1e-3)

    p = add("report", "render figures from a sweep output directory")
    p.add_argument("sweep_dir")
    p.add_argument("--out", default=None, help="figure directory (default SWEEP_DIR/figures)")
    p.add_argument("--format", choices=("png", "pdf", "svg"), default="png")
    return parser


# --- commands ----------------------------------------------------------------

def cmd_synth(args):
    if args.preset is not None:
        table = synth.presets()
        if args.preset not in table:
            raise UsageError(f"unknown preset {args.preset!r}; valid presets: {', '.join(table)}")
        spec = table[args.preset]
    else:
        with open(args.spec) as fh:
            spec = synth.SceneSpec.from_dict(json.load(fh))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.frames is not None:
        spec = replace(spec, n_frames=args.frames)
    scene = synth.generate_scene(spec)
    synth.write_scene(scene, args.out, fmt=args.format)
    print(f"wrote {len(scene)} frames and truth.csv to {args.out}")
    return EXIT_OK


def cmd_track(args):
    scene = synth.read_scene(args.scene_dir)
    cfg = _tracker_config(args, args.window_multiple, args.full_frame)
    result = track_video(scene.frames, cfg, scene.truth or None)
    out = args.out or os.path.join(args.scene_dir, "track")
    os.makedirs(out, exist_ok=True)
    write_track_json(result, os.path.join(out, "track.json"))
    write_track_csv(result, os.path.join(out, "track.csv"))
    print(f"success_rate={result.success_rate:.3f} mean_error={g6(result.mean_error)} "
          f"mean_pixels={g6(result.mean_pixels)} window_side={result.window_side} "
          f"frames={len(result.records)}")
    return EXIT_OK


def _sweep_sources(args):
    table = synth.presets(args.frames)
    sources = []
    names = args.preset or ([] if args.scene else list(table))
    for name in names:
        if name not in table:
            raise UsageError(f"unknown preset {name!r}; valid presets: {', '.join(table)}")
        spec = table[name]
        sources.append(replace(spec, seed=spec.seed + args.seed))
    for d in args.scene or []:
        if not os.path.isdir(d):
            raise UsageError(f"scene directory not found: {d}")
        sources.append(d)
    return sources


def cmd_sweep(args):
    lo, hi = args.range
    if not hi > lo:
        raise UsageError(f"--range needs LO < HI, got {lo} {hi}")
    sources = _sweep_sources(args)
    cfg = _tracker_config(args)
    report = sweep.sweep(sources, args.multiples, args.trials, cfg, jobs=args.jobs,
                         cost_metric=args.cost_metric, fit_range=(lo, hi))
    paths = sweep.write_outputs(report, args.out)
    if args.figures:
        from . import plotting

        plotting.render_all(paths["json"], os.path.join(args.out, "figures"))
    failed = sum(p.trials_failed for p in report.points)
    print(f"wrote {paths['csv']} and {paths['json']} ({failed} failed cell(s))")
    _print_optimum(report.models.poly, report.models.exp, report.intersection, report.argmin,
                   (lo, hi))
    if report.all_failed:
        print("error: every sweep cell failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _print_optimum(poly, exp, x_star, x_hat, rng):
    if poly is None or exp is None:
        print("optimum: unavailable (curves could not be fitted)")
        return
    lo, hi = rng
    if x_star is None:
        print(f"intersection: no intersection in [{lo:g}, {hi:g}]")
    else:
        print(f"intersection: x*={g6(x_star)} F(x*)={g6(poly(x_star))} G(x*)={g6(exp(x_star))}")
    if x_hat is not None:
        print(f"argmin: x_hat={g6(x_hat)} F+G={g6(poly(x_hat) + exp(x_hat))}")


def _read_xy(path, x_col, y_col):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    try:
        xi = header.index(x_col) if x_col else 0
        yi = header.index(y_col) if y_col else 1
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}")
    if max(xi, yi) >= len(header):
        raise ValueError(f"{path}: need at least two columns")
    xs, ys = [], []
    for lineno, r in enumerate(body, start=2):
        try:
            xs.append(float(r[xi]))
            ys.append(float(r[yi]))
        except (ValueError, IndexError):
            raise ValueError(f"{path}:{lineno}: not a numeric row: {r}")
    return xs, ys


def cmd_fit(args):
    xs, ys = _read_xy(args.csv_file, args.x_col, args.y_col)
    if args.model == "poly5":
        model = fitting.polyfit(xs, ys, 5)
        out = {"model": "poly5", "coeffs": list(model.coeffs)}
    else:
        model = fitting.expfit(xs, ys)
        out = {"model": "exp", "a": model.a, "b": model.b}
    out["residual_norm"] = fitting.residual_norm(model, xs, ys)
    out["n_points"] = len(xs)
    text = json.dumps(sweep.r6(out), indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_optimum(args):
    lo, hi = args.range
    if not hi > lo:
        raise UsageError(f"--range needs LO < HI, got {lo} {hi}")
    try:
        poly = fitting.PolyModel(args.poly)
        exp = fitting.ExpModel(*args.exp)
    except ValueError as exc:
        raise UsageError(str(exc))
    x_star = fitting.find_intersection(poly, exp, lo, hi)
    x_hat = fitting.argmin_sum(poly, exp, lo, hi, args.grid_step)
    _print_optimum(poly, exp, x_star, x_hat, (lo, hi))
    return EXIT_OK if x_star is not None else EXIT_RUNTIME


def cmd_report(args):
    from . import plotting

    out = args.out or os.path.join(args.sweep_dir, "figures")
    paths = plotting.render_all(args.sweep_dir, out, fmt=args.format)
    for p in paths:
        print(p)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "track": cmd_track, "sweep": cmd_sweep, "fit": cmd_fit,
            "optimum": cmd_optimum, "report": cmd_report}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv)
        if known.config:
            subparsers = parser._subparsers._group_actions[0].choices
            command = next((a for a in argv if a in subparsers), None)
            if command is None:
                raise UsageError("--config needs a subcommand")
            apply_config(subparsers[command], read_config(known.config))
    except (UsageError, OSError) as exc:
        print(f"croptrack: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"croptrack {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InitializationError, SingularInnovationError, synth.SceneSpecError,
            fitting.FitError, ValueError, OSError) as exc:
        print(f"croptrack {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
