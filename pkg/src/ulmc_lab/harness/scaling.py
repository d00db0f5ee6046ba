"""Iteration-count scaling studies on Gaussian targets.

For each sweep point the smallest iteration count reaching the accuracy
target is found with the exact oracle, then ``log N`` is regressed on the
log of the swept quantity.

Two search methods are offered:

``fixed_h``
    Keep the planner's step size (log factors frozen) and bisect on ``N``.
``optimal_h``
    For each ``N`` minimise the divergence over admissible step sizes and
    bisect on ``N`` for the smallest count whose optimum reaches the target.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .. import gaussian_oracle as go
from ..schedules import PlannerConstants, plan_kl_strongly_logconcave, polylog
from ..targets import make_builtin

__all__ = [
    "ScalingPoint",
    "ScalingResult",
    "fit_slope",
    "smallest_n",
    "kl_after",
    "sweep_kl",
    "stationary_bias",
    "SWEEP_AXES",
]

SWEEP_AXES = ("d", "eps", "L", "h")


@dataclass
class ScalingPoint:
    value: float
    N: int
    h: float
    gamma: float
    metric: float
    horizon_log: float


@dataclass
class ScalingResult:
    axis: str
    method: str
    points: list
    slope: float
    stderr: float
    ci: tuple
    adjusted_slope: Optional[float] = None
    regressor: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "method": self.method,
            "regressor": self.regressor,
            "slope": self.slope,
            "stderr": self.stderr,
            "ci95": list(self.ci),
            "log_adjusted_slope": self.adjusted_slope,
            "points": [vars(p) for p in self.points],
            **self.extra,
        }


def fit_slope(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, tuple]:
    """Least-squares slope of ``log y`` on ``log x`` with a 95% interval."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if lx.shape[0] < 2:
        raise ValueError("need at least two sweep points to fit a slope")
    res = stats.linregress(lx, ly)
    dof = lx.shape[0] - 2
    if dof > 0:
        t = stats.t.ppf(0.975, dof)
        ci = (float(res.slope - t * res.stderr), float(res.slope + t * res.stderr))
    else:
        ci = (float(res.slope), float(res.slope))
    return float(res.slope), float(res.stderr), ci


def smallest_n(ok: Callable[[int], bool], *, n_max: int = 1 << 24) -> int:
    """Smallest ``N >= 1`` with ``ok(N)``, by doubling then bisection.

    Assumes ``ok`` is monotone (false then true).
    """
    if ok(1):
        return 1
    lo, hi = 1, 2
    while not ok(hi):
        lo, hi = hi, hi * 2
        if hi > n_max:
            raise RuntimeError(f"accuracy target not reached within {n_max} iterations")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def kl_after(target, init: go.GaussianLaw, gamma: float, h: float, n: int) -> float:
    """KL of the chain's law after ``n`` steps from the target."""
    k = go.kernel_power(go.kernel_from_quadratic(target, gamma, h), n)
    law = go.GaussianLaw(k.A @ init.mean, k.A @ init.cov @ k.A.T + k.Q)
    return go.gaussian_kl(law, go.target_law(target))


def _point_setup(axis: str, value: float, base: dict):
    m = float(base.get("m", 1.0))
    L = float(base.get("L", 1.0))
    d = int(base.get("d", 1))
    eps = float(base.get("eps", 0.3))
    if axis == "d":
        d = int(value)
    elif axis == "eps":
        eps = float(value)
    elif axis == "L":
        L = float(value)
    else:
        raise ValueError(f"axis {axis!r} is not an iteration-count axis")
    params = [m] if m == L else [m, L]
    if d == 1 and m != L:
        raise ValueError("a one-dimensional sweep point cannot have m != L")
    return make_builtin("gaussian", d, params), m, L, d, eps


def _min_kl_over_h(target, init, gamma: float, n: int, h_max: float) -> tuple[float, float]:
    grid = np.geomspace(h_max * 1e-3, h_max, 40)
    vals = np.array([kl_after(target, init, gamma, h, n) for h in grid])
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(
            lambda lh: kl_after(target, init, gamma, math.exp(lh), n),
            bounds=(math.log(lo), math.log(hi)),
            method="bounded",
            options={"xatol": 1e-6},
        )
        if res.fun < vals[i]:
            return float(res.fun), float(math.exp(res.x))
    return float(vals[i]), float(grid[i])


def sweep_kl(
    axis: str,
    values: Sequence[float],
    base: dict,
    *,
    method: str = "fixed_h",
    constants: Optional[PlannerConstants] = None,
    gamma_rule: str = "planner",
    threads: int = 1,
) -> ScalingResult:
    """Smallest ``N`` with ``KL <= eps^2`` across a sweep of ``d``, ``eps`` or ``L``.

    Parameters
    ----------
    base : dict
        Fixed values of ``m``, ``L``, ``d`` and ``eps``.
    method : {"fixed_h", "optimal_h"}
        Search method, see the module docstring.
    constants : PlannerConstants, optional
        Defaults to unit constants with frozen log factors.
    gamma_rule : {"planner", "critical"}
        ``"planner"`` uses the planner's friction; ``"critical"`` uses
        ``sqrt(2L)``.
    threads : int
        Sweep points evaluated concurrently; results do not depend on it.
    """
    if method not in ("fixed_h", "optimal_h"):
        raise ValueError(f"unknown method {method!r}")
    if len(values) < 2:
        raise ValueError("a sweep needs at least two values")
    k = constants if constants is not None else PlannerConstants.frozen_logs()

    def one(value) -> ScalingPoint:
        target, m, L, d, eps = _point_setup(axis, value, base)
        plan = plan_kl_strongly_logconcave(m, L, d, eps, k, enforce_guards=(method == "fixed_h"))
        gamma = plan.gamma if gamma_rule == "planner" else math.sqrt(2.0 * L)
        init = plan.init_law()
        goal = eps * eps
        if method == "fixed_h":
            h = plan.h
            N = smallest_n(lambda n: kl_after(target, init, gamma, h, n) <= goal)
            metric = kl_after(target, init, gamma, h, N)
        else:
            h_max = min(1.0 / math.sqrt(L), 1.0 / gamma, 1.0 / math.sqrt(d))
            N = smallest_n(lambda n: _min_kl_over_h(target, init, gamma, n, h_max)[0] <= goal)
            metric, h = _min_kl_over_h(target, init, gamma, N, h_max)
        return ScalingPoint(float(value), int(N), float(h), float(gamma), float(metric), polylog(L / m * d / eps**2))

    # sweep points are independent; map keeps their order
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        points = list(pool.map(one, values))
    xs = [p.value for p in points]
    regressor = axis
    if axis == "eps":
        xs = [1.0 / x for x in xs]
        regressor = "1/eps"
    elif axis == "L":
        m = float(base.get("m", 1.0))
        xs = [x / m for x in xs]
        regressor = "kappa"
    ns = [p.N for p in points]
    slope, se, ci = fit_slope(xs, ns)
    adj, _, _ = fit_slope(xs, [p.N / p.horizon_log for p in points])
    return ScalingResult(axis, method, points, slope, se, ci, adj, regressor)


def stationary_bias(values: Sequence[float], base: dict, *, gamma: Optional[float] = None) -> ScalingResult:
    """KL of the chain's stationary law from the target across step sizes."""
    m = float(base.get("m", 1.0))
    L = float(base.get("L", 1.0))
    d = int(base.get("d", 1))
    target = make_builtin("gaussian", d, [m] if m == L else [m, L])
    g = math.sqrt(2.0 * L) if gamma is None else float(gamma)
    points = []
    for h in values:
        law = go.stationary_law(go.kernel_from_quadratic(target, g, h))
        kl = go.gaussian_kl(law, go.target_law(target))
        points.append(ScalingPoint(float(h), 0, float(h), g, kl, 1.0))
    slope, se, ci = fit_slope([p.value for p in points], [p.metric for p in points])
    return ScalingResult("h", "stationary", points, slope, se, ci, None, "h", {"quantity": "stationary KL"})
