"""Matplotlib figures for a sweep report.

Everything is drawn from the JSON report written by :mod:`croptrack.sweep`,
so figures can be re-rendered without re-running the sweep.
"""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fitting import ExpModel, PolyModel  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 10,
}
# strip the version stamp so re-rendered PNGs stay byte-stable
PNG_METADATA = {"Software": None}


def load_report(path) -> dict:
    if os.path.isdir(path):
        path = os.path.join(path, "report.json")
    with open(path) as fh:
        return json.load(fh)


def _axes(title, xlabel, ylabel):
    fig, ax = plt.subplots()
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return fig, ax


def _save(fig, out_dir, name, fmt):
    path = os.path.join(out_dir, f"{name}.{fmt}")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=PNG_METADATA if fmt == "png" else None)
    plt.close(fig)
    return path


def _models(report):
    poly = report["models"].get("poly")
    exp = report["models"].get("exp")
    return (PolyModel(poly["coeffs"]) if poly else None,
            ExpModel(exp["a"], exp["b"]) if exp else None)


def _masked(values):
    return np.array([np.nan if v is None else v for v in values], dtype=float)


def plot_success_rate(report, out_dir, fmt="png"):
    xs = report["window_multiples"]
    fig, ax = _axes("Detection success rate", "window multiple", "success rate")
    for name in report["objects"]:
        ax.plot(xs, _masked(report["per_object"][name]["success_rate"]), "o-", ms=3, label=name)
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    return _save(fig, out_dir, "success_rate", fmt)


def _normalized(report, key, title, ylabel, model, out_name, fmt, out_dir):
    xs = report["window_multiples"]
    fig, ax = _axes(title, "window multiple", ylabel)
    for name in report["objects"]:
        ys = report["per_object"][name].get(key)
        if ys is not None:
            ax.plot(xs, ys, "o", ms=3, alpha=0.6, label=name)
    pooled = report["pooled"].get(key)
    if pooled is not None:
        ax.plot(xs, pooled, "ks", ms=4, label="pooled")
    if model is not None:
        grid = np.linspace(min(xs), max(xs), 200)
        ax.plot(grid, model(grid), "k-", lw=1.2, label="fit")
    ax.legend()
    return _save(fig, out_dir, out_name, fmt)


def plot_normalized_cost(report, out_dir, fmt="png"):
    poly, _ = _models(report)
    label = "normalized pixels processed" if report["cost_metric"] == "pixels" \
        else "normalized processing time"
    return _normalized(report, "normalized_cost", "Normalized tracking cost", label, poly,
                       "normalized_cost", fmt, out_dir)


def plot_normalized_error(report, out_dir, fmt="png"):
    _, exp = _models(report)
    return _normalized(report, "normalized_error", "Normalized mean distance error",
                       "normalized error", exp, "normalized_error", fmt, out_dir)


def plot_mean_error(report, out_dir, fmt="png"):
    xs = report["window_multiples"]
    fig, ax = _axes("Mean distance error", "window multiple", "error (px)")
    for name in report["objects"]:
        ax.plot(xs, _masked(report["per_object"][name]["mean_distance_error"]), "o-", ms=3,
                label=name)
    ax.set_yscale("symlog", linthresh=1.0)
    ax.legend()
    return _save(fig, out_dir, "mean_error", fmt)


def plot_frame_errors(report, out_dir, fmt="png"):
    paths = []
    for name, traces in report.get("traces", {}).items():
        if not traces:
            continue
        fig, ax = _axes(f"Per-frame center error, {name}", "tracked frame", "error (px)")
        for m, errs in sorted(traces.items(), key=lambda kv: float(kv[0])):
            ax.plot(errs, lw=0.9, label=f"x{m}")
        ax.set_yscale("symlog", linthresh=1.0)
        ax.legend(ncol=len(traces))
        paths.append(_save(fig, out_dir, f"frame_error_{name}", fmt))
    return paths


def plot_tradeoff(report, out_dir, fmt="png"):
    poly, exp = _models(report)
    if poly is None or exp is None:
        return []
    lo, hi = report["optimum"]["range"]
    grid = np.linspace(lo, hi, 400)
    paths = []

    fig, ax = _axes("Cost and error models", "window multiple", "normalized value")
    ax.plot(grid, poly(grid), label="cost model")
    ax.plot(grid, exp(grid), label="error model")
    ax.set_ylim(-0.2, 1.4)
    ax.legend()
    paths.append(_save(fig, out_dir, "tradeoff", fmt))

    fig, ax = _axes("Optimum window multiple", "window multiple", "normalized value")
    ax.plot(grid, poly(grid), label="cost model")
    ax.plot(grid, exp(grid), label="error model")
    hit = report["optimum"].get("intersection")
    if hit is not None:
        ax.plot([hit["x"]], [hit["cost"]], "ro")
        ax.annotate(f"({hit['x']:.2f}, {hit['cost']:.2f})", (hit["x"], hit["cost"]),
                    textcoords="offset points", xytext=(8, 8))
    am = report["optimum"].get("argmin")
    if am is not None:
        ax.axvline(am["x"], color="0.5", ls="--", lw=0.8, label="argmin of sum")
    ax.set_ylim(-0.2, 1.4)
    ax.legend()
    paths.append(_save(fig, out_dir, "intersection", fmt))
    return paths


def render_all(report, out_dir, fmt="png") -> list[str]:
    """Write every figure for ``report`` (a dict or a path) into ``out_dir``."""
    if not isinstance(report, dict):
        report = load_report(report)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    with plt.rc_context(STYLE):
        paths.append(plot_success_rate(report, out_dir, fmt))
        paths.append(plot_normalized_cost(report, out_dir, fmt))
        paths.extend(plot_frame_errors(report, out_dir, fmt))
        paths.append(plot_mean_error(report, out_dir, fmt))
        paths.append(plot_normalized_error(report, out_dir, fmt))
        paths.extend(plot_tradeoff(report, out_dir, fmt))
    return paths
