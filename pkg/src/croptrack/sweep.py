"""Window-multiple sweep: track every scene at every multiple, average over
trials, normalize, fit the cost and error curves and locate the optimum.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import fitting
from .kalman import SingularInnovationError
from .synth import SceneSpec, generate_scene, read_scene
from .tracker import InitializationError, TrackerConfig, track_video

log = logging.getLogger(__name__)

DEFAULT_MULTIPLES = tuple(0.5 * k for k in range(1, 20))  # 0.5 .. 9.5
DEFAULT_TRIALS = 5
DEFAULT_RANGE = (0.0, 10.0)
TRACE_MULTIPLES = (0.5, 1.0, 2.0, 5.0, 9.5)
COST_METRICS = ("pixels", "time")

Source = Union[SceneSpec, str]


@dataclass(frozen=True)
class CellResult:
    """One (object, multiple, trial) tracking run."""

    failed: bool
    success_rate: float = math.nan
    mean_pixels: float = math.nan
    mean_elapsed: float = math.nan
    mean_error: float = math.nan
    window_side: int = 0
    errors: Optional[list[float]] = None
    reason: str = ""


@dataclass(frozen=True)
class SweepPoint:
    object_name: str
    window_multiple: float
    mean_elapsed: float
    mean_pixels: float
    mean_distance_error: float
    success_rate: float
    window_side: float
    trials_ok: int
    trials_failed: int

    @property
    def failed(self) -> bool:
        return self.trials_ok == 0


@dataclass(frozen=True)
class FitModels:
    poly: Optional[fitting.PolyModel]
    exp: Optional[fitting.ExpModel]
    poly_residual: Optional[float] = None
    exp_residual: Optional[float] = None


@dataclass
class SweepReport:
    multiples: list[float]
    objects: list[str]
    points: list[SweepPoint]
    cost_metric: str
    fit_range: tuple[float, float]
    normalized_cost: dict[str, Optional[list[float]]] = field(default_factory=dict)
    normalized_error: dict[str, Optional[list[float]]] = field(default_factory=dict)
    pooled_cost: Optional[list[float]] = None
    pooled_error: Optional[list[float]] = None
    models: FitModels = field(default_factory=lambda: FitModels(None, None))
    intersection: Optional[float] = None
    argmin: Optional[float] = None
    traces: dict[str, dict[float, list[float]]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def series(self, name: str, attr: str) -> list[float]:
        by_x = {p.window_multiple: p for p in self.points if p.object_name == name}
        return [getattr(by_x[x], attr) for x in self.multiples]

    @property
    def all_failed(self) -> bool:
        return all(p.failed for p in self.points)


def source_name(src: Source) -> str:
    if isinstance(src, SceneSpec):
        return src.name
    return os.path.basename(os.path.normpath(src))


def load_trial_scene(src: Source, trial: int):
    if isinstance(src, SceneSpec):
        return generate_scene(replace(src, seed=src.seed + trial))
    # recorded footage: every trial reuses the same frames
    return read_scene(src)


def run_cell(scene, multiple: float, cfg: TrackerConfig, keep_errors: bool = False) -> CellResult:
    truth = scene.truth or None
    try:
        res = track_video(scene.frames, replace(cfg, window_multiple=multiple), truth)
    except (InitializationError, SingularInnovationError) as exc:
        return CellResult(failed=True, reason=str(exc))
    mean_error = res.mean_error if res.mean_error is not None else math.nan
    return CellResult(
        failed=False,
        success_rate=res.success_rate,
        mean_pixels=res.mean_pixels,
        mean_elapsed=res.mean_elapsed,
        mean_error=mean_error,
        window_side=res.window_side,
        errors=list(res.errors) if (keep_errors and res.errors is not None) else None,
    )


def _run_trial(args):
    src, trial, multiples, cfg = args
    try:
        scene = load_trial_scene(src, trial)
    except Exception as exc:  # a bad source fails its cells, not the sweep
        return [CellResult(failed=True, reason=f"scene load failed: {exc}") for _ in multiples]
    keep = trial == 0
    return [run_cell(scene, m, cfg, keep_errors=keep and m in TRACE_MULTIPLES) for m in multiples]


def _mean(values):
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


def _aggregate(name, multiple, cells):
    ok = [c for c in cells if not c.failed]
    return SweepPoint(
        object_name=name,
        window_multiple=multiple,
        mean_elapsed=_mean([c.mean_elapsed for c in ok]),
        mean_pixels=_mean([c.mean_pixels for c in ok]),
        mean_distance_error=_mean([c.mean_error for c in ok]),
        success_rate=_mean([c.success_rate for c in ok]),
        window_side=_mean([float(c.window_side) for c in ok]),
        trials_ok=len(ok),
        trials_failed=len(cells) - len(ok),
    )


def _normalized_or_none(series, label, notes):
    if any(math.isnan(v) for v in series):
        notes.append(f"{label}: missing values, left out of the pooled curve")
        return None
    try:
        return fitting.normalize(series)
    except ValueError:
        notes.append(f"{label}: constant series, left out of the pooled curve")
        return None


def _pool(curves):
    usable = [c for c in curves.values() if c is not None]
    if not usable:
        return None
    return np.mean(np.asarray(usable), axis=0).tolist()


def sweep(sources: Sequence[Source], multiples: Sequence[float] = DEFAULT_MULTIPLES,
          trials: int = DEFAULT_TRIALS, cfg: Optional[TrackerConfig] = None, jobs: int = 1,
          cost_metric: str = "pixels", fit_range: tuple[float, float] = DEFAULT_RANGE,
          ) -> SweepReport:
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not multiples:
        raise ValueError("multiples grid is empty")
    if any(not m > 0 for m in multiples):
        raise ValueError("window multiples must be > 0")
    if cost_metric not in COST_METRICS:
        raise ValueError(f"cost_metric must be one of {COST_METRICS}, got {cost_metric!r}")
    cfg = cfg or TrackerConfig()
    multiples = [float(m) for m in multiples]
    names = [source_name(s) for s in sources]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate scene names: {names}")

    tasks = [(src, t, multiples, cfg) for src in sources for t in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_trial, tasks))
    else:
        outputs = [_run_trial(t) for t in tasks]

    # reduction order is fixed by the task list, not by completion order
    points, traces = [], {}
    for si, name in enumerate(names):
        per_trial = outputs[si * trials:(si + 1) * trials]
        traces[name] = {}
        for mi, m in enumerate(multiples):
            cells = [trial_cells[mi] for trial_cells in per_trial]
            points.append(_aggregate(name, m, cells))
            if cells[0].errors is not None:
                traces[name][m] = cells[0].errors
        log.info("swept %s", name)

    report = SweepReport(multiples=multiples, objects=names, points=points,
                         cost_metric=cost_metric, fit_range=tuple(fit_range), traces=traces)
    _fit_report(report)
    return report


def _fit_report(report: SweepReport) -> None:
    cost_attr = "mean_pixels" if report.cost_metric == "pixels" else "mean_elapsed"
    for name in report.objects:
        report.normalized_cost[name] = _normalized_or_none(
            report.series(name, cost_attr), f"{name} cost", report.notes)
        report.normalized_error[name] = _normalized_or_none(
            report.series(name, "mean_distance_error"), f"{name} error", report.notes)
    report.pooled_cost = _pool(report.normalized_cost)
    report.pooled_error = _pool(report.normalized_error)

    xs = report.multiples
    poly = exp = None
    poly_res = exp_res = None
    if report.pooled_cost is not None:
        try:
            poly = fitting.polyfit(xs, report.pooled_cost, 5)
            poly_res = fitting.residual_norm(poly, xs, report.pooled_cost)
        except fitting.FitError as exc:
            report.notes.append(f"cost fit skipped: {exc}")
    if report.pooled_error is not None:
        try:
            exp = fitting.expfit(xs, report.pooled_error)
            exp_res = fitting.residual_norm(exp, xs, report.pooled_error)
        except fitting.FitError as exc:
            report.notes.append(f"error fit skipped: {exc}")
    report.models = FitModels(poly, exp, poly_res, exp_res)
    if poly is not None and exp is not None:
        lo, hi = report.fit_range
        report.intersection = fitting.find_intersection(poly, exp, lo, hi)
        if report.intersection is None:
            report.notes.append(f"no intersection in [{lo:g}, {hi:g}]")
        report.argmin = fitting.argmin_sum(poly, exp, lo, hi)


# --- output ----------------------------------------------------------------

SWEEP_COLUMNS = ["object", "window_multiple", "window_side", "mean_pixels", "mean_elapsed_s",
                 "mean_distance_error", "success_rate", "trials_ok", "trials_failed"]


def g6(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.6g}"


def r6(v):
    """Round floats to 6 significant digits for JSON output."""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if not math.isfinite(v) else float(f"{v:.6g}")
    if isinstance(v, dict):
        return {str(k): r6(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [r6(x) for x in v]
    return v


def write_sweep_csv(report: SweepReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for p in report.points:
            w.writerow([p.object_name, g6(p.window_multiple), g6(p.window_side), g6(p.mean_pixels),
                        g6(p.mean_elapsed), g6(p.mean_distance_error), g6(p.success_rate),
                        p.trials_ok, p.trials_failed])


def _value_at(model, x):
    return None if (model is None or x is None) else model(x)


def report_dict(report: SweepReport) -> dict:
    """JSON-ready summary. Wall-clock values are left out unless they are the cost metric."""
    poly, exp = report.models.poly, report.models.exp
    per_object = {}
    for name in report.objects:
        entry = {
            "success_rate": report.series(name, "success_rate"),
            "mean_pixels": report.series(name, "mean_pixels"),
            "mean_distance_error": report.series(name, "mean_distance_error"),
            "window_side": report.series(name, "window_side"),
            "normalized_cost": report.normalized_cost.get(name),
            "normalized_error": report.normalized_error.get(name),
        }
        if report.cost_metric == "time":
            entry["mean_elapsed_s"] = report.series(name, "mean_elapsed")
        per_object[name] = entry
    x_star = report.intersection
    x_hat = report.argmin
    return r6({
        "cost_metric": report.cost_metric,
        "window_multiples": report.multiples,
        "objects": report.objects,
        "per_object": per_object,
        "pooled": {"normalized_cost": report.pooled_cost, "normalized_error": report.pooled_error},
        "models": {
            "poly": None if poly is None else {"coeffs": list(poly.coeffs),
                                               "residual_norm": report.models.poly_residual},
            "exp": None if exp is None else {"a": exp.a, "b": exp.b,
                                             "residual_norm": report.models.exp_residual},
        },
        "optimum": {
            "range": list(report.fit_range),
            "intersection": None if x_star is None else {
                "x": x_star, "cost": _value_at(poly, x_star), "error": _value_at(exp, x_star)},
            "argmin": None if x_hat is None else {
                "x": x_hat, "sum": _value_at(poly, x_hat) + _value_at(exp, x_hat)},
        },
        "traces": {name: {g6(m): errs for m, errs in t.items()} for name, t in report.traces.items()},
        "notes": report.notes,
    })


def write_report_json(report: SweepReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report_dict(report), fh, indent=1)
        fh.write("\n")


def _write_xy(path, header, xs, ys):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for x, y in zip(xs, ys):
            w.writerow([g6(x), g6(y)])


def write_curves(report: SweepReport, out_dir) -> list[str]:
    """Two-column data files, one per plotted curve."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(fname, header, xs, ys):
        if ys is None:
            return
        path = os.path.join(out_dir, fname)
        _write_xy(path, header, xs, ys)
        written.append(path)

    xs = report.multiples
    for name in report.objects:
        emit(f"success_rate_{name}.csv", ["window_multiple", "success_rate"], xs,
             report.series(name, "success_rate"))
        emit(f"normalized_cost_{name}.csv", ["window_multiple", "normalized_cost"], xs,
             report.normalized_cost.get(name))
        emit(f"mean_error_{name}.csv", ["window_multiple", "mean_distance_error"], xs,
             report.series(name, "mean_distance_error"))
        emit(f"normalized_error_{name}.csv", ["window_multiple", "normalized_error"], xs,
             report.normalized_error.get(name))
        for m, errs in report.traces.get(name, {}).items():
            emit(f"frame_error_{name}_x{g6(m)}.csv", ["track_index", "distance_error"],
                 range(len(errs)), errs)
    emit("normalized_cost_pooled.csv", ["window_multiple", "normalized_cost"], xs, report.pooled_cost)
    emit("normalized_error_pooled.csv", ["window_multiple", "normalized_error"], xs,
         report.pooled_error)
    lo, hi = report.fit_range
    grid = np.linspace(lo, hi, 201)
    if report.models.poly is not None:
        emit("fit_cost.csv", ["window_multiple", "cost_model"], grid, report.models.poly(grid))
    if report.models.exp is not None:
        emit("fit_error.csv", ["window_multiple", "error_model"], grid, report.models.exp(grid))
    if report.intersection is not None and report.models.poly is not None:
        x = report.intersection
        emit("intersection.csv", ["window_multiple", "value"], [x], [report.models.poly(x)])
    return written


def write_outputs(report: SweepReport, out_dir) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {"csv": os.path.join(out_dir, "sweep.csv"),
             "json": os.path.join(out_dir, "report.json")}
    write_sweep_csv(report, paths["csv"])
    write_report_json(report, paths["json"])
    write_curves(report, os.path.join(out_dir, "curves"))
    return paths
