"""Curve models for the window-size trade-off.

Cost is modelled as a degree-5 polynomial of the window multiple and
distance error as ``a * exp(b * x)``. The optimum is where the two
normalized curves cross.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

# Reference cost polynomial (a0..a5) and error exponential (a, b)
REFERENCE_COST_COEFFS = (-0.2007, 0.4672, -0.1370, 0.0295, -0.0032, 0.0001)
REFERENCE_ERROR_PARAMS = (1.31, -0.5457)

EXP_FLOOR = 1e-4
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class PolyModel:
    """``coeffs[i]`` multiplies ``x**i``."""

    coeffs: tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if not coeffs or not all(math.isfinite(c) for c in coeffs):
            raise ValueError("polynomial coefficients must be finite and non-empty")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, x):
        return eval_poly(self, x)


@dataclass(frozen=True)
class ExpModel:
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("exponential parameters must be finite")
        if not self.a > 0:
            raise ValueError(f"amplitude a must be > 0, got {self.a}")

    def __call__(self, x):
        return eval_exp(self, x)


def reference_models() -> tuple[PolyModel, ExpModel]:
    return PolyModel(REFERENCE_COST_COEFFS), ExpModel(*REFERENCE_ERROR_PARAMS)


def euclidean_distance(p: Sequence[float], q: Sequence[float]) -> float:
    return math.hypot(q[0] - p[0], q[1] - p[1])


def normalize(series: Sequence[float]) -> list[float]:
    """Min-max rescale to ``[0, 1]``."""
    v = np.asarray(series, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if not hi > lo:
        raise ValueError("cannot normalize a constant series")
    out = (v - lo) / (hi - lo)
    out[v == lo] = 0.0
    out[v == hi] = 1.0
    return out.tolist()


def eval_poly(m: PolyModel, x):
    acc = np.zeros_like(np.asarray(x, dtype=np.float64))
    for c in reversed(m.coeffs):
        acc = acc * x + c
    return float(acc) if acc.ndim == 0 else acc


def eval_exp(m: ExpModel, x):
    out = m.a * np.exp(m.b * np.asarray(x, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def polyfit(xs: Sequence[float], ys: Sequence[float], degree: int = 5) -> PolyModel:
    """Least-squares polynomial via QR of the Vandermonde matrix."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("xs and ys must be 1-D and the same length")
    if degree < 0:
        raise FitError(f"degree must be >= 0, got {degree}")
    if len(np.unique(x)) <= degree:
        raise FitError(f"degree {degree} fit needs more than {degree} distinct x values, "
                       f"got {len(np.unique(x))}")
    # center and scale x so the Vandermonde columns are well conditioned
    shift = 0.5 * (x.max() + x.min())
    scale = 0.5 * (x.max() - x.min()) or 1.0
    t = (x - shift) / scale
    V = np.vander(t, degree + 1, increasing=True)
    Q, R = np.linalg.qr(V)
    c_t = solve_triangular(R, Q.T @ y)
    return PolyModel(_unscale(c_t, shift, scale))


def _unscale(c_t, shift, scale):
    # p(x) = sum c_t[k] ((x - shift) / scale)^k, expanded in powers of x
    n = len(c_t)
    out = np.zeros(n)
    for k, ck in enumerate(c_t):
        for j in range(k + 1):
            out[j] += ck * math.comb(k, j) * (-shift) ** (k - j) / scale ** k
    return tuple(out)


def expfit(xs: Sequence[float], ys: Sequence[float], max_iter: int = 50,
           step_tol: float = 1e-10) -> ExpModel:
    """Fit ``a * exp(b x)``: log-linear start, then Gauss-Newton on raw residuals.

    ``ys`` are floored at ``EXP_FLOOR`` first, so exact zeros are allowed.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("xs and ys must be 1-D and the same length")
    if len(np.unique(x)) < 2:
        raise FitError("exponential fit needs at least 2 distinct x values")
    if np.any(~np.isfinite(y)):
        raise FitError("ys must be finite")
    y = np.maximum(y, EXP_FLOOR)

    lin = polyfit(x, np.log(y), 1)
    log_a, b = lin.coeffs
    a = math.exp(log_a)
    sse = _exp_sse(a, b, x, y)
    for _ in range(max_iter):
        e = np.exp(b * x)
        r = y - a * e
        J = np.column_stack([e, a * x * e])
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        # halve the step until the residual drops; keeps a > 0
        lam = 1.0
        while lam > 1e-12:
            a_new, b_new = a + lam * step[0], b + lam * step[1]
            if a_new > 0:
                sse_new = _exp_sse(a_new, b_new, x, y)
                if sse_new <= sse:
                    break
            lam *= 0.5
        else:
            break
        a, b, sse = a_new, b_new, sse_new
        if np.max(np.abs(lam * step)) < step_tol:
            break
    return ExpModel(float(a), float(b))


def _exp_sse(a, b, x, y):
    with np.errstate(over="ignore", invalid="ignore"):
        r = y - a * np.exp(b * x)
        sse = float(r @ r)
    return sse if math.isfinite(sse) else math.inf


def residual_norm(model, xs, ys) -> float:
    pred = model(np.asarray(xs, dtype=np.float64))
    return float(np.linalg.norm(np.asarray(ys, dtype=np.float64) - pred))


def _bisect(h, lo, hi, tol):
    h_lo = h(lo)
    while hi - lo >= tol:
        mid = 0.5 * (lo + hi)
        h_mid = h(mid)
        if h_mid == 0.0:
            return mid
        if (h_mid < 0) == (h_lo < 0):
            lo, h_lo = mid, h_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def find_intersection(f: PolyModel, g: ExpModel, lo: float = 0.0, hi: float = 10.0,
                      tol: float = 1e-6, scan_step: float = 1e-3) -> Optional[float]:
    """Smallest ``x`` in ``[lo, hi]`` where ``f(x) == g(x)``, or ``None``.

    A fine scan brackets the first sign change of ``f - g``; bisection then
    narrows the bracket below ``tol``.
    """
    if not hi > lo:
        raise ValueError(f"empty range [{lo}, {hi}]")

    def h(x):
        return eval_poly(f, x) - eval_exp(g, x)

    n = max(1, int(math.ceil((hi - lo) / scan_step)))
    grid = np.linspace(lo, hi, n + 1)
    vals = eval_poly(f, grid) - eval_exp(g, grid)
    zero = np.flatnonzero(vals == 0.0)
    change = np.flatnonzero(np.signbit(vals[:-1]) != np.signbit(vals[1:]))
    candidates = []
    if zero.size:
        candidates.append(float(grid[zero[0]]))
    if change.size:
        i = change[0]
        candidates.append(_bisect(h, float(grid[i]), float(grid[i + 1]), tol))
    return min(candidates) if candidates else None


def golden_section(fn: Callable[[float], float], lo: float, hi: float,
                   tol: float = 1e-9, max_iter: int = 200) -> float:
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def argmin_sum(f: PolyModel, g: ExpModel, lo: float = 0.0, hi: float = 10.0,
               grid_step: float = 1e-3) -> float:
    """Minimizer of ``f + g`` on ``[lo, hi]``: grid scan, then golden-section polish."""
    if not grid_step > 0:
        raise ValueError(f"grid_step must be > 0, got {grid_step}")
    if not hi > lo:
        raise ValueError(f"empty range [{lo}, {hi}]")

    def total(x):
        return eval_poly(f, x) + eval_exp(g, x)

    n = max(1, int(math.ceil((hi - lo) / grid_step)))
    grid = np.linspace(lo, hi, n + 1)
    vals = total(grid)
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n)]
    x = golden_section(total, float(a), float(b))
    # the polish must never lose to the grid
    return x if total(x) <= vals[i] else float(grid[i])
