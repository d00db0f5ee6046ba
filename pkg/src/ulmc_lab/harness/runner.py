"""Run a validated experiment config and write its report files.

Outputs in the run directory:

``report.json``
    Schema version, software version, config echo, resolved plan, results,
    checks and the overall verdict.  Byte-identical for a fixed config, seed
    and software version.
``curves.csv``
    One row per checkpoint or sweep point.  The first line is the schema tag
    ``# ulmc-lab-curves/1``.
``timing.json``
    Wall-clock time, kept apart from the report so the report stays
    reproducible.
``figures/*.png``
    Static plots of the curves, when enabled.
"""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .. import __version__
from .. import gaussian_oracle as go
from .. import girsanov as gi
from ..divergences import moment_error, pinsker_tv_bound
from ..integrator import geometric_checkpoints, run_chain, write_trajectory_csv
from ..schedules import (
    PlanWarning,
    PlannerConstants,
    SchedulePlan,
    plan_kl_strongly_logconcave,
    plan_renyi_poincare,
    plan_tv_lsi,
)
from ..targets import Target, make_builtin, mean_norm
from . import plotting
from .acceptance import CRITERIA, EXCLUDED, run_criterion
from .config import ExperimentConfig
from .scaling import sweep_kl, stationary_bias

__all__ = ["RunError", "RunReport", "run", "build_target", "build_plan", "REPORT_SCHEMA", "CURVES_FORMAT"]

REPORT_SCHEMA = 1
CURVES_FORMAT = "ulmc-lab-curves/1"
EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

# slope windows used when a scaling config does not declare its own
DEFAULT_SLOPES = {"d": (0.35, 0.65), "eps": (0.8, 1.2), "L": (1.0, 1.5), "h": (1.8, 2.2)}


class RunError(ValueError):
    """A config that validates structurally but cannot be run (e.g. mode and target clash)."""


@dataclass
class RunReport:
    report: dict
    curves_header: list
    curves: list
    out_dir: Path
    seconds: float = 0.0
    figures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.report["passed"])

    @property
    def exit_code(self) -> int:
        return EXIT_PASS if self.passed else EXIT_FAIL


def _check(name: str, value, tolerance: str, passed: bool) -> dict:
    return {"name": name, "value": value, "tolerance": tolerance, "passed": bool(passed)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def build_target(cfg: ExperimentConfig) -> Target:
    t = cfg.target
    return make_builtin(t["family"], int(t["dim"]), t.get("params", []))


def build_plan(cfg: ExperimentConfig, target: Target) -> SchedulePlan:
    """Resolve the planner, then apply explicit overrides (which take precedence)."""
    p = cfg.planner
    c = target.constants
    d = target.dim
    k = PlannerConstants(**p.get("constants", {}))
    beta = p.get("beta")
    guards = bool(p.get("enforce_guards", True))
    name = p["name"]
    ov = cfg.overrides
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PlanWarning)
        if name == "kl_strongly_logconcave":
            if c.m <= 0:
                raise RunError(f"planner kl_strongly_logconcave needs a strongly convex target; {target.name} has m = 0")
            plan = plan_kl_strongly_logconcave(c.m, c.L, d, p["eps"], k, enforce_guards=guards, beta=beta)
        elif name == "tv_lsi":
            if c.lsi_constant is None:
                raise RunError(f"planner tv_lsi needs a log-Sobolev constant; {target.name} declares none")
            plan = plan_tv_lsi(c.lsi_constant, c.L, d, p["eps"], k, enforce_guards=guards, beta=beta)
        elif name == "renyi_poincare":
            if c.C_PI is None:
                raise RunError(f"planner renyi_poincare needs a Poincare constant; {target.name} declares none")
            plan = plan_renyi_poincare(
                c.C_PI, c.L, p.get("s", c.s), d, p["eps"], p["xi"], max(p.get("R", 0.0), c.R), k,
                gamma=ov.get("gamma"), enforce_guards=guards, beta=beta,
            )
        else:
            gamma, h, N = float(ov["gamma"]), float(ov["h"]), int(ov["N"])
            T = N * h
            b = beta if beta is not None else (min(gamma / T, 1.0) if N > 0 else 0.0)
            return SchedulePlan(
                "manual", gamma, h, N, T, cfg.metric, float(p["eps"]), 1.0 / (2.0 * c.L + b), b, d,
                constants=k, warnings=tuple(cfg.warnings), inputs={"L": c.L, "d": d},
            )
    notes = [str(w.message) for w in caught if issubclass(w.category, PlanWarning)]
    plan = plan.with_overrides(gamma=ov.get("gamma"), h=ov.get("h"), N=ov.get("N"))
    extra = [n for n in list(cfg.warnings) + notes if n not in plan.warnings]
    if extra:
        plan = replace(plan, warnings=tuple(plan.warnings) + tuple(extra))
    return plan


def _checkpoints(cfg: ExperimentConfig, N: int) -> list[int]:
    if cfg.checkpoints == "geometric":
        return geometric_checkpoints(N)
    return sorted({int(s) for s in cfg.checkpoints if int(s) <= N} | {0, N})


def _require_quadratic(target: Target, mode: str):
    if not target.is_quadratic:
        raise RunError(f"mode {mode} requires a quadratic (gaussian) target, got family {target.name!r}")


def _exact_laws(target: Target, plan: SchedulePlan, steps: list[int]) -> list:
    return go.propagate_path(plan.init_law(), go.kernel_from_quadratic(target, plan.gamma, plan.h), steps)


# ----------------------------------------------------------------- modes


def _mode_exact_oracle(cfg, target, plan):
    _require_quadratic(target, "exact_oracle")
    steps = _checkpoints(cfg, plan.N)
    laws = _exact_laws(target, plan, steps)
    ref = go.target_law(target)
    order = cfg.renyi_order
    header = ["step", "t", "kl", f"renyi_{order:g}", "w2", "tv_pinsker"]
    rows = []
    for s, law in zip(steps, laws):
        kl = go.gaussian_kl(law, ref)
        rows.append([s, s * plan.h, kl, go.gaussian_renyi(order, law, ref),
                     go.gaussian_w2(law, ref), pinsker_tv_bound(kl)])
    final = rows[-1]
    value = {"KL": final[2], "Renyi": final[3], "TV": final[5]}[cfg.metric]
    tol = cfg.metric_tolerance()
    checks = [_check(f"final {cfg.metric}", value, f"<= {tol:g}", value <= tol)]
    results = {"final": dict(zip(header, final)), "metric": cfg.metric}
    return results, checks, header, rows


def _mode_sample(cfg, target, plan):
    init = plan.init_law()
    steps = _checkpoints(cfg, plan.N)
    snaps = run_chain(init, target, plan, cfg.seed, n_chains=cfg.chains, checkpoints=steps, threads=cfg.threads)
    quad = target.is_quadratic
    exact = {law_step: law for law_step, law in zip(steps, _exact_laws(target, plan, steps))} if quad else {}
    header = ["step", "t", "mean_norm", "mean_norm_se", "cov_trace"]
    if quad:
        header += ["oracle_cov_trace", "max_abs_mean_z", "cov_rel_error"]
    rows = []
    last = None
    for snap in snaps:
        x = snap.points.x
        rep = moment_error(x, exact[snap.step_index] if quad else None)
        cov_trace = float(np.trace(np.atleast_2d(np.cov(x, rowvar=False))))
        row = [snap.step_index, snap.step_index * plan.h, rep.sample_mean_norm, rep.sample_mean_norm_se, cov_trace]
        if quad:
            _, ocov = exact[snap.step_index].marginal_x()
            row += [float(np.trace(ocov)), float(np.max(np.abs(rep.mean_z))), rep.cov_error]
        rows.append(row)
        last = (snap, rep)
    snap, rep = last
    finite = bool(np.all(np.isfinite(snap.points.x)) and np.all(np.isfinite(snap.points.v)))
    checks = [_check("iterates finite", finite, "all finite", finite)]
    results = {
        "chains": cfg.chains,
        "final_step": snap.step_index,
        "final_moments": rep.to_dict(),
        "initialization": {
            "position_variance": plan.init_var,
            "momentum_variance": 1.0,
            "sample_position_mean": snaps[0].points.x.mean(axis=0),
            "sample_position_var": snaps[0].points.x.var(axis=0, ddof=1),
        },
    }
    if quad:
        _, ocov = exact[snap.step_index].marginal_x()
        n = cfg.chains
        allowed = 6.0 * math.sqrt(np.trace(ocov) ** 2 + np.trace(ocov @ ocov)) / (math.sqrt(n) * np.linalg.norm(ocov))
        zmax = float(np.max(np.abs(rep.mean_z)))
        checks.append(_check("mean agrees with exact law", zmax, "max |z| <= 5", zmax <= 5.0))
        checks.append(_check("covariance agrees with exact law", rep.cov_error, f"<= {allowed:.4g}", rep.cov_error <= allowed))
    else:
        results["reference_mean_norm"] = mean_norm(target)
    if cfg.output.get("trajectory"):
        results["trajectory_file"] = "trajectory.csv"
    return results, checks, header, rows, snaps


def _mode_girsanov(cfg, target, plan):
    g = cfg.girsanov
    T = float(g.get("T", plan.horizon))
    n_windows = T / plan.h
    if abs(n_windows - round(n_windows)) > 1e-9 * max(1.0, n_windows) or round(n_windows) < 1:
        raise RunError(f"girsanov.T={T} must be a positive multiple of h={plan.h}")
    stats = gi.simulate_interpolated_pair(
        target, plan.gamma, plan.h, T, substeps=int(g["substeps"]), seed=cfg.seed,
        paths=int(g["paths"]), init=plan.init_law(), threads=cfg.threads,
    )
    q = float(g["q"])
    bound = gi.renyi_path_bound(stats, q, bootstrap=int(g["bootstrap"]), seed=cfg.seed)
    results = {"T": T, "q": q, "renyi_order_bounded": 2 * q, "bound": bound.to_dict(),
               "drift_gap_mean": float(np.mean(stats.drift_gap_integral))}
    checks = [_check("bound finite", bound.value, "finite", math.isfinite(bound.value))]
    header = ["window", "t", "mean_sup_increment", "q90_sup_increment"]
    rows = [[i + 1, (i + 1) * plan.h, float(np.mean(col)), float(np.quantile(col, 0.9))]
            for i, col in enumerate(stats.sup_increment.T)]
    if target.is_quadratic:
        n = int(round(n_windows))
        chain = go.propagate_law(plan.init_law(), go.kernel_from_quadratic(target, plan.gamma, plan.h), n)
        diff = go.propagate_law(plan.init_law(), go.diffusion_kernel(target, plan.gamma, T), 1)
        exact = go.gaussian_renyi(2 * q, chain, diff)
        results["exact_renyi"] = exact
        checks.append(_check(f"bound dominates exact Renyi order {2 * q:g}", bound.value, f">= {exact:.6g}", bound.value >= exact))
    return results, checks, header, rows


def _mode_validators(cfg, target, plan):
    v = cfg.validators
    results, checks, figs = {}, [], {}
    header = ["validator", "level", "empirical", "bound"]
    rows = []
    if v["brownian"]:
        b = gi.tail_validator_brownian(target.dim, plan.h, int(v["trials"]), cfg.seed)
        results["brownian"] = b.to_dict()
        checks.append(_check("Brownian sup tail", b.margin, "margin <= 0", b.passed))
        rows += [["brownian", e, p, bd] for e, p, bd in zip(b.eta, b.empirical, b.bound)]
        figs["brownian"] = b
    if v["iterates"]:
        it = gi.tail_validator_iterates(
            target, plan, trials=int(v["trials"]), seed=cfg.seed, multiplier=float(v["multiplier"]),
            deltas=tuple(v["deltas"]), threads=cfg.threads,
        )
        results["iterates"] = it.to_dict()
        checks.append(_check("iterate envelopes", it.smallest_passing_multiplier, f"<= {it.multiplier:g}", it.passed))
        for dl, xq, xe, vq, ve in zip(it.deltas, it.x_quantiles, it.x_envelope, it.v_quantiles, it.v_envelope):
            rows.append(["iterate_position", dl, xq, xe])
            rows.append(["iterate_momentum", dl, vq, ve])
    if not checks:
        raise RunError("validators mode with every validator disabled")
    return results, checks, header, rows, figs


def _mode_scaling(cfg):
    sw = cfg.sweep
    axis = sw["axis"]
    base = dict(sw["base"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PlanWarning)
        if axis == "h":
            res = stationary_bias(sw["values"], base)
        else:
            res = sweep_kl(axis, sw["values"], base, method=sw["method"], threads=cfg.threads)
    lo, hi = sw.get("expected_slope", DEFAULT_SLOPES[axis])
    results = res.to_dict()
    if axis == "eps":
        results["slope_vs_log_eps"] = -res.slope
    checks = [_check(f"slope vs {res.regressor}", res.slope, f"in [{lo:g}, {hi:g}]", lo <= res.slope <= hi)]
    if axis == "h":
        header = ["h", "stationary_kl"]
        rows = [[p.value, p.metric] for p in res.points]
    else:
        header = [axis, "regressor", "N", "h", "gamma", "final_kl", "horizon_log"]
        rows = []
        for p in res.points:
            reg = 1.0 / p.value if axis == "eps" else (p.value / base["m"] if axis == "L" else p.value)
            rows.append([p.value, reg, p.N, p.h, p.gamma, p.metric, p.horizon_log])
    return results, checks, header, rows, res


def _mode_acceptance(cfg):
    cid = int(cfg.preset.split("/", 1)[1])
    if cid in EXCLUDED:
        raise RunError(f"acceptance/{cid} is excluded from quantitative checks: {EXCLUDED[cid]}")
    if cid not in CRITERIA:
        raise RunError(f"unknown preset {cfg.preset}; available: acceptance/1 .. acceptance/{max(CRITERIA)}")
    res = run_criterion(cid)
    checks = [_check(res.name, res.measured, res.tolerance, res.passed)]
    results = res.to_dict()
    header = ["criterion", "passed"]
    rows = [[cid, res.passed]]
    return results, checks, header, rows


# ----------------------------------------------------------------- driver


def _config_echo(cfg: ExperimentConfig) -> dict:
    # thread count and output location do not affect results; they are
    # recorded in timing.json so that report.json stays byte-identical
    echo = cfg.to_dict()
    echo.pop("threads")
    echo["output"].pop("dir", None)
    return echo


def _write_csv(path: Path, header: list, rows: list):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {CURVES_FORMAT}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def run(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> RunReport:
    """Execute ``cfg`` and write ``report.json``, ``curves.csv`` and friends.

    Raises :class:`RunError` (and lets module errors propagate) on problems
    that make the run impossible; the CLI maps those to exit code 1.
    """
    start = time.perf_counter()
    out = Path(out_dir if out_dir is not None else cfg.output["dir"])
    out.mkdir(parents=True, exist_ok=True)
    plan = None
    figs = []
    extra = None
    if cfg.mode == "acceptance":
        results, checks, header, rows = _mode_acceptance(cfg)
    elif cfg.mode == "scaling_study":
        results, checks, header, rows, extra = _mode_scaling(cfg)
    else:
        target = build_target(cfg)
        if cfg.mode == "exact_oracle":
            _require_quadratic(target, cfg.mode)
        plan = build_plan(cfg, target)
        if cfg.mode == "exact_oracle":
            results, checks, header, rows = _mode_exact_oracle(cfg, target, plan)
        elif cfg.mode == "sample":
            results, checks, header, rows, snaps = _mode_sample(cfg, target, plan)
            if cfg.output.get("trajectory"):
                write_trajectory_csv(out / "trajectory.csv", snaps)
        elif cfg.mode == "girsanov":
            results, checks, header, rows = _mode_girsanov(cfg, target, plan)
        elif cfg.mode == "validators":
            results, checks, header, rows, extra = _mode_validators(cfg, target, plan)
        else:  # pragma: no cover - the config schema rules this out
            raise RunError(f"unknown mode {cfg.mode}")
        results["target"] = target.describe()
    passed = all(c["passed"] for c in checks)
    report = _jsonable(
        {
            "schema_version": REPORT_SCHEMA,
            "software": {"name": "ulmc-lab", "version": __version__},
            "mode": cfg.mode,
            "config": _config_echo(cfg),
            "plan": plan.to_dict() if plan is not None else None,
            "warnings": list(plan.warnings) if plan is not None else list(cfg.warnings),
            "results": results,
            "checks": checks,
            "passed": passed,
        }
    )
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_csv(out / "curves.csv", header, rows)
    if cfg.output.get("figures", True):
        figs = _figures(cfg, out, header, rows, extra)
    elapsed = time.perf_counter() - start
    with open(out / "timing.json", "w", encoding="utf-8") as fh:
        json.dump({"wall_clock_seconds": elapsed, "threads": cfg.threads, "out_dir": str(out)}, fh, indent=2)
        fh.write("\n")
    return RunReport(report, header, rows, out, elapsed, figs)


def _figures(cfg, out: Path, header, rows, extra) -> list:
    fig_dir = out / "figures"
    made = []
    if cfg.mode in ("exact_oracle", "sample", "girsanov") and rows:
        x = [r[1] for r in rows]
        series = {name: [r[i] for r in rows] for i, name in enumerate(header) if i >= 2 and name != "mean_norm_se"}
        logy = cfg.mode == "exact_oracle"
        hline = cfg.metric_tolerance() if cfg.mode == "exact_oracle" and cfg.metric == "KL" else None
        made.append(plotting.plot_curves(x, series, fig_dir / f"{cfg.mode}.png", xlabel="time t = k h",
                                         ylabel="value", title=cfg.mode.replace("_", " "), logy=logy, hline=hline))
    elif cfg.mode == "scaling_study" and extra is not None:
        res = extra
        if cfg.sweep["axis"] == "h":
            xs, ys, ylabel = [p.value for p in res.points], [p.metric for p in res.points], "stationary KL"
        else:
            xs, ys, ylabel = [r[1] for r in rows], [r[2] for r in rows], "smallest N"
        made.append(plotting.plot_scaling(xs, ys, res.slope, fig_dir / "scaling.png", xlabel=res.regressor, ylabel=ylabel))
    elif cfg.mode == "validators" and extra:
        if "brownian" in extra:
            b = extra["brownian"]
            made.append(plotting.plot_tail(b.eta, b.empirical, b.bound, fig_dir / "brownian_tail.png",
                                           title=f"sup |B_t| tail, d={b.d}, h={b.h:g}"))
    return made
