"""Acceptance checks, each runnable as the harness preset ``acceptance/<id>``.

Every check returns a :class:`CriterionResult` carrying the measured value,
the tolerance it is judged against, and supporting details.  The functions
are deterministic: seeds are fixed inside each check.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .. import gaussian_oracle as go
from .. import girsanov as gi
from ..integrator import PhasePoint, lipschitz_estimate, step_coefficients, ulmc_step
from ..schedules import PlanWarning, SchedulePlan, initialization, optimal_poincare_gamma
from ..targets import make_builtin
from .scaling import fit_slope, stationary_bias, sweep_kl

__all__ = ["CriterionResult", "CRITERIA", "run_criterion", "EXCLUDED"]


@dataclass
class CriterionResult:
    cid: int
    name: str
    passed: bool
    measured: object
    tolerance: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.cid}: {self.name} | measured={_fmt(self.measured)} | required {self.tolerance}"

    def to_dict(self) -> dict:
        return {
            "id": self.cid,
            "name": self.name,
            "passed": self.passed,
            "measured": self.measured,
            "tolerance": self.tolerance,
            "details": self.details,
        }


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(u) for u in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_fmt(u)}" for k, u in v.items()) + "}"
    return str(v)


def _frozen_gradient_kernel(H: np.ndarray, gamma: float, h: float):
    """One-step law from a matrix exponential, independent of the step coefficients.

    The augmented state ``(x, v, x0)`` obeys ``dx = v dt``,
    ``dv = -gamma v dt - H x0 dt + sqrt(2 gamma) dB`` and ``dx0 = 0``; the
    Van Loan construction yields its transition matrix and noise covariance.
    """
    d = H.shape[0]
    n = 3 * d
    F = np.zeros((n, n))
    F[:d, d : 2 * d] = np.eye(d)
    F[d : 2 * d, d : 2 * d] = -gamma * np.eye(d)
    F[d : 2 * d, 2 * d :] = -H
    G = np.zeros((n, n))
    G[d : 2 * d, d : 2 * d] = 2.0 * gamma * np.eye(d)
    block = np.block([[-F, G], [np.zeros((n, n)), F.T]]) * h
    E = expm(block)
    Phi = E[n:, n:].T
    Q = Phi @ E[:n, n:]
    A = Phi[: 2 * d, : d] + Phi[: 2 * d, 2 * d :]
    A = np.hstack([A, Phi[: 2 * d, d : 2 * d]])
    return A, 0.5 * (Q[: 2 * d, : 2 * d] + Q[: 2 * d, : 2 * d].T)


def _one_step_exactness(target, gamma, h, x0, v0, draws, seed):
    d = target.dim
    c = step_coefficients(gamma, h)
    start = PhasePoint(np.asarray(x0, float), np.asarray(v0, float))
    base = ulmc_step(start, target, c, np.zeros((2, d))).stacked()
    # the step is affine in the noise: columns of the noise loading matrix
    cols = []
    for i in range(2 * d):
        e = np.zeros(2 * d)
        e[i] = 1.0
        cols.append(ulmc_step(start, target, c, e.reshape(2, d)).stacked() - base)
    J = np.array(cols).T
    cov_step = J @ J.T
    k = go.kernel_from_quadratic(target, gamma, h)
    A_ref, Q_ref = _frozen_gradient_kernel(np.asarray(target.quadratic, float), gamma, h)
    z0 = start.stacked()
    analytic_err = max(
        float(np.max(np.abs(base - k.A @ z0))),
        float(np.max(np.abs(cov_step - k.Q))),
        float(np.max(np.abs(k.A - A_ref))),
        float(np.max(np.abs(k.Q - Q_ref))),
    )
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((draws, 2, d))
    batch = PhasePoint(np.broadcast_to(start.x, (draws, d)), np.broadcast_to(start.v, (draws, d)))
    out = ulmc_step(batch, target, c, noise).stacked()
    mean = out.mean(axis=0)
    mean_z = (mean - k.A @ z0) / np.sqrt(np.diag(k.Q) / draws)
    centred = out - k.A @ z0
    zs = []
    for i in range(2 * d):
        for j in range(i, 2 * d):
            prod = centred[:, i] * centred[:, j]
            se = prod.std(ddof=1) / math.sqrt(draws)
            zs.append((prod.mean() - k.Q[i, j]) / se)
    return analytic_err, float(np.max(np.abs(mean_z))), float(np.max(np.abs(zs)))


def criterion_1() -> CriterionResult:
    """One-step law of the integrator on quadratic targets against the exact kernel."""
    cases = [
        (make_builtin("gaussian", 1, [1.0]), 1.0, 0.1, [1.0], [0.0]),
        (make_builtin("gaussian", 2, [1.0, 4.0]), 2.0, 0.05, [1.0, -0.5], [0.3, 0.2]),
        (make_builtin("gaussian", 1, [1.0]), math.sqrt(2.0), 5e-4, [0.5], [-1.0]),
    ]
    analytic, mz, cz = [], [], []
    for i, (t, g, h, x0, v0) in enumerate(cases):
        a, m, c = _one_step_exactness(t, g, h, x0, v0, 1_000_000, seed=100 + i)
        analytic.append(a)
        mz.append(m)
        cz.append(c)
    passed = max(analytic) <= 1e-12 and max(mz) <= 4.0 and max(cz) <= 4.0
    return CriterionResult(
        1,
        "one-step integrator law matches the exact kernel",
        passed,
        {"analytic_max_abs_err": max(analytic), "max_mean_z": max(mz), "max_cov_z": max(cz)},
        "analytic error <= 1e-12 and Monte Carlo |z| <= 4 at 1e6 draws",
        {"cases": len(cases)},
    )


def criterion_2() -> CriterionResult:
    """Order of the stationary KL bias in the step size."""
    res = stationary_bias([0.02, 0.01, 0.005, 0.0025], {"m": 1.0, "L": 1.0, "d": 1}, gamma=math.sqrt(2.0))
    return CriterionResult(
        2,
        "stationary KL bias is second order in h",
        abs(res.slope - 2.0) <= 0.2,
        res.slope,
        "slope 2.0 +/- 0.2",
        {"kl": [p.metric for p in res.points], "h": [p.value for p in res.points]},
    )


def _scaling_details(res, alt):
    return {
        "N": [p.N for p in res.points],
        "h": [p.h for p in res.points],
        "gamma": res.points[0].gamma,
        "ci95": list(res.ci),
        "log_adjusted_slope": res.adjusted_slope,
        "optimal_h_slope": alt.slope,
        "optimal_h_N": [p.N for p in alt.points],
    }


def criterion_3() -> CriterionResult:
    """Dimension slope of the bisected iteration count at the planner's step size."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PlanWarning)
        values = [1, 2, 4, 8, 16, 32]
        res = sweep_kl("d", values, {"m": 1.0, "L": 1.0, "eps": 0.3}, method="fixed_h")
        alt = sweep_kl("d", values, {"m": 1.0, "L": 1.0, "eps": 0.3}, method="optimal_h")
    return CriterionResult(
        3,
        "dimension scaling of the bisected iteration count",
        abs(res.slope - 0.5) <= 0.15,
        res.slope,
        "slope 0.5 +/- 0.15",
        _scaling_details(res, alt),
    )


def criterion_4() -> CriterionResult:
    """Accuracy slope of the bisected iteration count at the planner's step size."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PlanWarning)
        values = [0.4, 0.2, 0.1, 0.05]
        res = sweep_kl("eps", values, {"m": 1.0, "L": 1.0, "d": 4}, method="fixed_h")
        alt = sweep_kl("eps", values, {"m": 1.0, "L": 1.0, "d": 4}, method="optimal_h")
    return CriterionResult(
        4,
        "accuracy scaling of the bisected iteration count",
        abs(res.slope - 1.0) <= 0.2,
        res.slope,
        "slope of log N on log(1/eps) 1.0 +/- 0.2",
        _scaling_details(res, alt),
    )


def criterion_5() -> CriterionResult:
    """Contraction rate of the twisted mean map as h goes to 0."""
    hs = np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])
    measured = {}
    ok = True
    for m, L in [(1.0, 1.0), (1.0, 4.0)]:
        t = make_builtin("gaussian", 2, [m, L])
        g = math.sqrt(2.0 * L)
        probes = np.zeros((1, 2))
        y = np.array([(1.0 - lipschitz_estimate(t, g, h, probes)) / h for h in hs])
        intercept = float(np.polyfit(hs, y, 1)[1])
        expected = m / math.sqrt(2.0 * L)
        rel = abs(intercept - expected) / expected
        measured[f"m={m:g},L={L:g}"] = intercept
        ok = ok and rel <= 0.10
    return CriterionResult(
        5,
        "contraction rate of the twisted mean map",
        ok,
        measured,
        "extrapolated (1 - Lip)/h within 10% of m/sqrt(2L) (0.707107 and 0.353553)",
    )


def criterion_6() -> CriterionResult:
    """Log-Sobolev constant of the iterates against its decaying bound."""
    t = make_builtin("gaussian", 1, [1.0])
    g = math.sqrt(2.0)
    init = go.product_law(4.0 * np.eye(1), 4.0)
    rep = go.lsi_trajectory_check(t, g, 0.005, 2000, init)
    stationary = go.stationary_law(go.kernel_from_quadratic(t, g, 0.005))
    M = np.array([[1.0, 0.0], [1.0, 2.0 / g]])
    stat_const = float(np.linalg.eigvalsh(M @ stationary.cov @ M.T)[-1])
    corrected = go.lsi_trajectory_check(t, g, 0.005, 2000, init, floor=4.0 * math.sqrt(2.0) / g)
    return CriterionResult(
        6,
        "log-Sobolev constant tracked along the chain stays under its bound",
        rep.passed,
        rep.margin,
        "violation margin <= 0",
        {
            "floor": rep.floor,
            "slack": rep.slack,
            "final_constant": float(rep.constants[-1]),
            "stationary_twisted_constant": stat_const,
            "margin_with_floor_4sqrt(2L)/(m gamma)": corrected.margin,
        },
    )


def criterion_7() -> CriterionResult:
    """Girsanov path bound against the exact time-marginal Renyi divergence."""
    t = make_builtin("gaussian", 1, [1.0])
    g = math.sqrt(2.0)
    T = 1.0
    init = initialization(1, 1.0, g / T)
    bounds, exact = [], []
    for h in (0.04, 0.02, 0.01):
        st = gi.simulate_interpolated_pair(t, g, h, T, paths=10_000, seed=7, init=init)
        b = gi.renyi_path_bound(st, 1.0)
        n = int(round(T / h))
        chain = go.propagate_law(init, go.kernel_from_quadratic(t, g, h), n)
        diffusion = go.propagate_law(init, go.diffusion_kernel(t, g, T), 1)
        bounds.append(b.value)
        exact.append(go.gaussian_renyi(2.0, chain, diffusion))
    passed = all(b >= e for b, e in zip(bounds, exact))
    return CriterionResult(
        7,
        "Girsanov path bound dominates the exact time-marginal Renyi divergence",
        passed,
        {"bound": bounds, "exact_R2": exact},
        "bound >= exact R2 for h in {0.04, 0.02, 0.01}",
        {"ratio": [b / e for b, e in zip(bounds, exact)]},
    )


def criterion_8() -> CriterionResult:
    """Decay rate of the Lyapunov functional under fine-step propagation."""
    measured = {}
    ok = True
    h, stride = 1e-4, 100
    for m, L, d in [(1.0, 1.0, 1), (1.0, 4.0, 2)]:
        t = make_builtin("gaussian", d, [m] if m == L else [m, L])
        g = 2.0 * math.sqrt(2.0 * L)
        k = go.kernel_from_quadratic(t, g, h)
        tl = go.target_law(t)
        law = initialization(d, L, 0.0)
        mean, cov = law.mean, law.cov
        vals = []
        for step in range(int(round(2.0 / h)) + 1):
            if step % stride == 0:
                vals.append(go.lyapunov_functional(go.GaussianLaw(mean, cov), tl, L))
            mean = k.A @ mean
            cov = k.A @ cov @ k.A.T + k.Q
            cov = 0.5 * (cov + cov.T)
        vals = np.array(vals)
        rates = -np.diff(np.log(vals)) / (stride * h)
        required = 0.95 / (10.0 * (1.0 / m) * math.sqrt(2.0 * L))
        measured[f"m={m:g},L={L:g}"] = float(rates.min())
        ok = ok and bool(rates.min() >= required)
    return CriterionResult(
        8,
        "Lyapunov functional decays at the hypocoercive rate",
        ok,
        measured,
        "minimum local decay rate >= 0.95/(10 C_LSI sqrt(2L)) (0.0672 and 0.0336)",
    )


def criterion_9() -> CriterionResult:
    """Brownian supremum and iterate tail validators at default multipliers."""
    checks = {}
    b = gi.tail_validator_brownian(2, 0.01, 10_000, seed=9)
    checks["brownian_margin"] = b.margin
    ok = b.passed
    plans = {
        "gaussian": (make_builtin("gaussian", 2, [1.0]), 2.0 * math.sqrt(2.0), 5.0),
        "hyperbolic": (make_builtin("hyperbolic", 2), optimal_poincare_gamma(2.0), 10.0),
    }
    for name, (t, g, mult) in plans.items():
        h, N = 0.01, 1000
        T = N * h
        beta = g / T
        plan = SchedulePlan("manual", g, h, N, T, "KL", 0.1, 1.0 / (2.0 * t.constants.L + beta), beta, 2)
        rep = gi.tail_validator_iterates(t, plan, trials=10_000, seed=9, multiplier=mult)
        checks[f"{name}_smallest_multiplier"] = rep.smallest_passing_multiplier
        ok = ok and rep.passed
    return CriterionResult(
        9,
        "Brownian and iterate tail validators pass",
        ok,
        checks,
        "Brownian margin <= 0; iterate quantiles within 5x (gaussian) and 10x (hyperbolic) envelopes",
    )


CRITERIA: dict[int, Callable[[], CriterionResult]] = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
}

EXCLUDED = {
    10: "log-Sobolev scaling on non-log-concave targets, high-dimensional Poincare complexity and "
    "comparisons with earlier bounds are not reproducible at desk scale; planner formulas are "
    "tested at the unit level instead"
}


def run_criterion(cid: int) -> CriterionResult:
    if cid not in CRITERIA:
        raise KeyError(f"unknown acceptance criterion {cid}; available: {sorted(CRITERIA)}")
    start = time.perf_counter()
    res = CRITERIA[cid]()
    res.seconds = time.perf_counter() - start
    return res
