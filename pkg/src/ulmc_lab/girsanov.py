"""Girsanov path bounds and empirical tail validators.

The discretisation error of ULMC is controlled through the change of
measure between the interpolated chain and the diffusion.  Both share the
noise ``sqrt(2 gamma) dB`` in the momentum, and their drifts differ by
``grad U(x_t) - grad U(x_{kh})`` on the window ``[kh, (k+1)h)``.  The Rényi
divergence of order ``2q`` between the path laws is then bounded by the log
of an exponential moment of ``(4 q^2 / gamma) * int |grad U(x_t) - grad U(x_kh)|^2 dt``.

This module estimates that quantity by simulation and checks the tail
estimates used to control it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from . import rng as _rng
from .gaussian_oracle import GaussianLaw, LinearKernel, compose
from .integrator import NonFiniteError, PhasePoint, chain_maxima, step_coefficients
from .targets import ModifiedTargetParams, Target, mean_norm, modify, renyi2_gaussian_init

__all__ = [
    "GirsanovError",
    "PathStatistic",
    "PathBound",
    "simulate_interpolated_pair",
    "window_kernel",
    "renyi_path_bound",
    "BrownianTailReport",
    "tail_validator_brownian",
    "IterateTailReport",
    "tail_validator_iterates",
    "MovementReport",
    "movement_bound_check",
    "DEFAULT_ITERATE_MULTIPLIER",
]

DEFAULT_ITERATE_MULTIPLIER = 10.0
MIN_PATHS = 100


class GirsanovError(ValueError):
    """Invalid inputs to a path estimator or validator."""


@dataclass
class PathStatistic:
    """Per-path outputs of :func:`simulate_interpolated_pair`.

    ``drift_gap_integral[i]`` is the substep quadrature of
    ``int_0^T |grad U(x_t) - grad U(x_{floor(t/h) h})|^2 dt`` on path ``i``;
    ``sup_increment[i, k]`` is ``max_t |x_t - x_{kh}|`` over window ``k``.
    """

    drift_gap_integral: np.ndarray
    sup_increment: np.ndarray
    final: PhasePoint
    gamma: float
    h: float
    T: float
    substeps: int
    seed: int

    @property
    def n_paths(self) -> int:
        return self.drift_gap_integral.shape[0]


def _windows(T: float, h: float) -> int:
    n = T / h
    N = int(round(n))
    if N < 1 or abs(n - N) > 1e-9 * max(1.0, n):
        raise GirsanovError(f"horizon T={T} must be a positive integer multiple of h={h}")
    return N


def _initial_points(init, n: int, d: int, seed: int):
    if init is None:
        return np.zeros((n, d)), np.zeros((n, d))
    if isinstance(init, PhasePoint):
        x = np.broadcast_to(init.x, (n, d)).copy()
        v = np.broadcast_to(init.v, (n, d)).copy()
        return x, v
    if isinstance(init, GaussianLaw):
        if init.dim != d:
            raise GirsanovError(f"initial law has dimension {init.dim}, target has {d}")
        F = init.factor()
        out = np.empty((n, 2 * d))
        for b, s, e in _rng.blocks(n):
            z = _rng.stream(seed, b, 0, _rng.INIT_DRAW).standard_normal((e - s, 2 * d))
            out[s:e] = init.mean + z @ F.T
        return out[:, :d], out[:, d:]
    raise GirsanovError("init must be None, a PhasePoint or a GaussianLaw")


def _path_block(args):
    target, coeffs, M, N, x, v, b, seed = args
    d = target.dim
    L = coeffs.chol
    dt = coeffs.h
    integral = np.zeros(x.shape[0])
    sup = np.zeros((x.shape[0], N))
    for k in range(N):
        x_start = x.copy()
        g0 = target.grad(x)
        if not np.all(np.isfinite(g0)):
            raise NonFiniteError(f"non-finite gradient at window {k}", step=k)
        acc = np.zeros(x.shape[0])
        peak = np.zeros(x.shape[0])
        for j in range(M):
            noise = _rng.stream(seed, b, k * M + j, _rng.PATH_NOISE).standard_normal((x.shape[0], 2, d))
            z1 = noise[:, 0, :]
            z2 = noise[:, 1, :]
            x_new = x + coeffs.c_xv * v - coeffs.c_xg * g0 + L[0, 0] * z1
            v = coeffs.eta * v - coeffs.c_vg * g0 + L[1, 0] * z1 + L[1, 1] * z2
            x = x_new
            gap = target.grad(x) - g0
            f = np.sum(gap * gap, axis=1)
            if not np.all(np.isfinite(f)):
                raise NonFiniteError(f"non-finite drift gap at window {k}, substep {j}", step=k)
            # trapezoid on the window; the integrand is 0 at the window start
            acc += f if j < M - 1 else 0.5 * f
            np.maximum(peak, np.linalg.norm(x - x_start, axis=1), out=peak)
        integral += dt * acc
        sup[:, k] = peak
    return integral, sup, x, v


def simulate_interpolated_pair(
    target: Target,
    gamma: float,
    h: float,
    T: float,
    *,
    substeps: int = 32,
    seed: int = 0,
    paths: int = 10_000,
    init=None,
    threads: int = 1,
) -> PathStatistic:
    """Simulate the interpolated chain on a substep grid and record drift gaps.

    Within each window of length ``h`` the gradient is frozen at the window
    start, so the process is an Ornstein-Uhlenbeck system that is simulated
    exactly on ``substeps`` sub-intervals.  Noise for substep ``j`` of the
    whole run is drawn from a stream keyed by ``j``; two runs with the same
    substep length therefore share their Brownian path, which couples runs
    at different ``h``.

    Parameters
    ----------
    init : None, PhasePoint or GaussianLaw
        Starting point(s); ``None`` starts every path at the origin.
    """
    if substeps < 8:
        raise GirsanovError(f"need at least 8 substeps per window, got {substeps}")
    if paths < 1:
        raise GirsanovError("need at least one path")
    N = _windows(T, h)
    d = target.dim
    coeffs = step_coefficients(gamma, h / substeps)
    x, v = _initial_points(init, paths, d, seed)
    jobs = [(target, coeffs, substeps, N, x[s:e], v[s:e], b, seed) for b, s, e in _rng.blocks(paths)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            res = list(pool.map(_path_block, jobs))
    else:
        res = [_path_block(j) for j in jobs]
    return PathStatistic(
        drift_gap_integral=np.concatenate([r[0] for r in res]),
        sup_increment=np.concatenate([r[1] for r in res]),
        final=PhasePoint(np.concatenate([r[2] for r in res]), np.concatenate([r[3] for r in res])),
        gamma=float(gamma),
        h=float(h),
        T=float(T),
        substeps=int(substeps),
        seed=int(seed),
    )


def window_kernel(target: Target, gamma: float, h: float, substeps: int) -> LinearKernel:
    """Exact law map of one window simulated by ``substeps`` frozen-gradient substeps.

    Only defined for quadratic targets; used to confirm that substepping
    reproduces the one-step ULMC kernel.
    """
    if target.quadratic is None:
        raise GirsanovError("window_kernel needs a quadratic target")
    H = np.asarray(target.quadratic)
    d = target.dim
    I, Z = np.eye(d), np.zeros((d, d))
    c = step_coefficients(gamma, h / substeps)
    # augmented state (x, v, x_start); x_start is carried unchanged
    A_sub = np.block(
        [
            [I, c.c_xv * I, -c.c_xg * H],
            [Z, c.eta * I, -c.c_vg * H],
            [Z, Z, I],
        ]
    )
    Q_sub = np.zeros((3 * d, 3 * d))
    Q_sub[: 2 * d, : 2 * d] = np.kron(c.cov, I)
    step = LinearKernel(A_sub, Q_sub)
    total = LinearKernel(np.eye(3 * d), np.zeros((3 * d, 3 * d)))
    for _ in range(substeps):
        total = compose(total, step)
    # embed (x, v) -> (x, v, x) and project back to (x, v)
    E = np.vstack([np.eye(2 * d), np.hstack([I, Z])])
    P = np.hstack([np.eye(2 * d), np.zeros((2 * d, d))])
    return LinearKernel(P @ total.A @ E, P @ total.Q @ P.T)


@dataclass
class PathBound:
    """Log-mean-exp path bound with its uncertainty."""

    value: float
    interval: tuple
    raw: float
    bias_correction: float
    prefactor: float
    n_paths: int
    overflow: bool = False
    diagnostic_quantile: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "interval": list(self.interval),
            "raw": self.raw,
            "bias_correction": self.bias_correction,
            "prefactor": self.prefactor,
            "n_paths": self.n_paths,
            "overflow": self.overflow,
            "diagnostic_quantile": self.diagnostic_quantile,
        }


def _log_mean_exp_chunked(a: np.ndarray, chunk: int = 4096) -> tuple[float, float]:
    """Streaming log of the mean of exp(a) and the delta-method bias term."""
    shift = -math.inf
    s1 = 0.0  # sum of exp(a - shift)
    s2 = 0.0  # sum of exp(2 (a - shift))
    for start in range(0, a.shape[0], chunk):
        block = a[start : start + chunk]
        bmax = float(np.max(block))
        if bmax > shift:
            scale = math.exp(shift - bmax) if math.isfinite(shift) else 0.0
            s1 *= scale
            s2 *= scale * scale
            shift = bmax
        w = np.exp(block - shift)
        s1 += float(np.sum(w))
        s2 += float(np.sum(w * w))
    n = a.shape[0]
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0) * n / max(n - 1, 1)
    # E[log mean] ~ log E - var / (2 n E^2); add the second term back
    correction = var / (2.0 * n * mean * mean)
    return shift + math.log(mean), correction


def renyi_path_bound(
    stats,
    q: float,
    gamma: Optional[float] = None,
    *,
    prefactor: Optional[float] = None,
    bootstrap: int = 1000,
    confidence: float = 0.9,
    seed: int = 0,
) -> PathBound:
    """``log E exp(c * drift_gap_integral)`` with ``c = 4 q^2 / gamma`` by default.

    ``stats`` is a :class:`PathStatistic` or an array of per-path integrals.
    The returned value includes a first-order bias correction for the log of
    a sample mean; the interval is a percentile bootstrap.
    """
    if isinstance(stats, PathStatistic):
        integrals = stats.drift_gap_integral
        gamma = stats.gamma if gamma is None else gamma
    else:
        integrals = np.asarray(stats, dtype=float).reshape(-1)
    if integrals.shape[0] < MIN_PATHS:
        raise GirsanovError(f"need at least {MIN_PATHS} paths, got {integrals.shape[0]}")
    if q < 1:
        raise GirsanovError(f"q must be at least 1, got {q}")
    if prefactor is None:
        if gamma is None or not gamma > 0:
            raise GirsanovError("gamma is required for the default prefactor 4 q^2 / gamma")
        prefactor = 4.0 * q * q / gamma
    with np.errstate(over="ignore", invalid="ignore"):
        a = prefactor * integrals
    finite = np.isfinite(a)
    if not np.all(finite):
        quant = float(np.quantile(a[finite], 0.99)) if np.any(finite) else None
        return PathBound(math.inf, (math.inf, math.inf), math.inf, 0.0, prefactor, a.shape[0], True, quant)
    raw, corr = _log_mean_exp_chunked(a)
    gen = _rng.stream(seed, 0, 0, _rng.BOOTSTRAP)
    n = a.shape[0]
    boots = np.empty(bootstrap)
    for i in range(bootstrap):
        idx = gen.integers(0, n, size=n)
        boots[i] = float(special.logsumexp(a[idx]) - math.log(n))
    lo, hi = np.quantile(boots, [(1 - confidence) / 2, (1 + confidence) / 2])
    return PathBound(raw + corr, (float(lo), float(hi)), raw, corr, prefactor, n)


@dataclass
class BrownianTailReport:
    eta: np.ndarray
    empirical: np.ndarray
    bound: np.ndarray
    std_error: np.ndarray
    d: int
    h: float
    trials: int
    substeps: int

    @property
    def margin(self) -> float:
        """Largest excess of the empirical tail over the bound."""
        return float(np.max(self.empirical - self.bound))

    @property
    def passed(self) -> bool:
        return self.margin <= 0.0

    def to_dict(self) -> dict:
        i = int(np.argmax(self.empirical - self.bound))
        return {
            "d": self.d,
            "h": self.h,
            "trials": self.trials,
            "substeps": self.substeps,
            "margin": self.margin,
            "worst_eta": float(self.eta[i]),
            "passed": self.passed,
            "note": "supremum monitored on a discrete grid, which can only underestimate the true supremum",
        }


def tail_validator_brownian(
    d: int,
    h: float,
    trials: int = 10_000,
    seed: int = 0,
    *,
    substeps: int = 64,
    eta=None,
) -> BrownianTailReport:
    """Compare ``P(sup_{t<=h} |B_t| >= eta)`` with ``3 exp(-eta^2 / (6 d h))``."""
    if trials < 10_000:
        raise GirsanovError(f"the Brownian validator needs at least 10^4 trials, got {trials}")
    if not h > 0 or d < 1:
        raise GirsanovError("need h > 0 and d >= 1")
    if eta is None:
        eta = math.sqrt(d * h) * np.linspace(0.0, 8.0, 33)
    eta = np.asarray(eta, dtype=float)
    sup = np.empty(trials)
    for b, s, e in _rng.blocks(trials):
        z = _rng.stream(seed, b, 0, _rng.VALIDATOR).standard_normal((e - s, substeps, d))
        path = np.cumsum(z * math.sqrt(h / substeps), axis=1)
        sup[s:e] = np.max(np.linalg.norm(path, axis=2), axis=1)
    emp = np.array([np.mean(sup >= t) for t in eta])
    bound = 3.0 * np.exp(-(eta**2) / (6.0 * d * h))
    se = np.sqrt(emp * (1 - emp) / trials)
    return BrownianTailReport(eta, emp, bound, se, int(d), float(h), int(trials), int(substeps))


@dataclass
class IterateTailReport:
    deltas: tuple
    x_quantiles: np.ndarray
    v_quantiles: np.ndarray
    x_envelope: np.ndarray
    v_envelope: np.ndarray
    multiplier: float
    renyi2: float
    mean_norm: float
    beta: float
    S: float
    trials: int

    @property
    def smallest_passing_multiplier(self) -> float:
        return float(max(np.max(self.x_quantiles / self.x_envelope), np.max(self.v_quantiles / self.v_envelope)))

    @property
    def passed(self) -> bool:
        return bool(
            np.all(self.x_quantiles <= self.multiplier * self.x_envelope)
            and np.all(self.v_quantiles <= self.multiplier * self.v_envelope)
        )

    def to_dict(self) -> dict:
        return {
            "deltas": list(self.deltas),
            "x_quantiles": self.x_quantiles.tolist(),
            "v_quantiles": self.v_quantiles.tolist(),
            "x_envelope": self.x_envelope.tolist(),
            "v_envelope": self.v_envelope.tolist(),
            "multiplier": self.multiplier,
            "smallest_passing_multiplier": self.smallest_passing_multiplier,
            "renyi2_init": self.renyi2,
            "mean_norm": self.mean_norm,
            "beta": self.beta,
            "S": self.S,
            "trials": self.trials,
            "passed": self.passed,
        }


def tail_validator_iterates(
    target: Target,
    plan,
    modified: Optional[ModifiedTargetParams] = None,
    trials: int = 10_000,
    seed: int = 0,
    *,
    multiplier: float = DEFAULT_ITERATE_MULTIPLIER,
    deltas: Sequence[float] = (0.1, 0.01),
    renyi2: Optional[float] = None,
    m_norm: Optional[float] = None,
    threads: int = 1,
) -> IterateTailReport:
    """Check high-probability envelopes for the chain's positions and momenta.

    The envelopes at level ``delta`` are
    ``m + sqrt((T/gamma)(R2 + log(N/delta)))`` for ``max_k |x_k|`` and
    ``sqrt(d) + sqrt(R2 + log(N/delta))`` for ``max_k |v_k|``, where ``m`` is
    ``E|x|`` under the target and ``R2`` the order-2 Rényi divergence of the
    initial law from the hinge-modified target.  Defaults: ``beta = plan.beta``
    and ``S = m``.
    """
    deltas = tuple(float(x) for x in deltas)
    if any(not (0 < dl <= 0.5) for dl in deltas):
        raise GirsanovError("the iterate validator is only defined for delta in (0, 0.5]")
    if multiplier <= 0:
        raise GirsanovError("multiplier must be positive")
    d = target.dim
    if m_norm is None:
        m_norm = mean_norm(target)
    if modified is None:
        modified = ModifiedTargetParams(beta=min(plan.beta, 1.0), S=m_norm)
    if renyi2 is None:
        renyi2 = renyi2_gaussian_init(modify(target, modified), plan.init_var)
    mx, mv = chain_maxima(plan.init_law(), target, plan, seed, n_chains=trials, threads=threads)
    N, T = plan.N, plan.horizon
    xq = np.quantile(mx, [1 - dl for dl in deltas])
    vq = np.quantile(mv, [1 - dl for dl in deltas])
    logs = np.array([renyi2 + math.log(N / dl) for dl in deltas])
    x_env = m_norm + np.sqrt(T / plan.gamma * logs)
    v_env = math.sqrt(d) + np.sqrt(logs)
    return IterateTailReport(
        deltas, xq, vq, x_env, v_env, float(multiplier), float(renyi2), float(m_norm),
        float(modified.beta), float(modified.S), int(trials),
    )


@dataclass
class MovementReport:
    estimate: float
    bound: float
    lam: float
    s: float
    C: float
    trials: int
    terms: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.estimate / self.bound

    @property
    def passed(self) -> bool:
        return self.estimate <= self.bound

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "bound": self.bound,
            "ratio": self.ratio,
            "lambda": self.lam,
            "s": self.s,
            "C": self.C,
            "trials": self.trials,
            "terms": self.terms,
            "passed": self.passed,
        }


def movement_bound_check(
    target: Target,
    gamma: float,
    h: float,
    start: PhasePoint,
    trials: int = 100_000,
    seed: int = 0,
    *,
    s: Optional[float] = None,
    c: float = 0.25,
    C: float = 50.0,
    lam: Optional[float] = None,
    substeps: int = 64,
) -> MovementReport:
    """Exponential moment of the short-time displacement of the diffusion.

    Estimates ``log E exp(lam sup_{t<=h} |x_t - x_0|^{2s})`` with
    ``lam = c / (gamma^s d^s h^{3s})`` and compares it with
    ``C (L^{2s} h^{4s} (1 + |x_0|^{2s^2}) + h^{2s} |v_0|^{2s} + gamma^s d^s h^{3s}) lam``.
    The diffusion is approximated by ``substeps`` frozen-gradient substeps.
    """
    L = target.constants.L
    s = target.constants.s if s is None else float(s)
    d = target.dim
    if not (0 < s <= 1):
        raise GirsanovError(f"s must lie in (0, 1], got {s}")
    if h > min(1.0 / math.sqrt(L), 1.0 / gamma):
        raise GirsanovError(f"h={h} exceeds min(L^-1/2, 1/gamma)={min(1 / math.sqrt(L), 1 / gamma):.6g}")
    lam_max = 1.0 / (gamma**s * d**s * h ** (3 * s))
    if lam is None:
        if not (0 < c <= 1):
            raise GirsanovError(f"c must lie in (0, 1], got {c}")
        lam = c * lam_max
    elif not (0 < lam <= lam_max):
        raise GirsanovError(f"lambda={lam} outside the admissible window (0, {lam_max:.6g}]")
    x0 = np.broadcast_to(np.asarray(start.x, dtype=float), (trials, d)).copy()
    v0 = np.broadcast_to(np.asarray(start.v, dtype=float), (trials, d)).copy()
    coeffs = step_coefficients(gamma, h / substeps)
    Lc = coeffs.chol
    sup = np.empty(trials)
    for b, lo, hi in _rng.blocks(trials):
        x, v = x0[lo:hi].copy(), v0[lo:hi].copy()
        peak = np.zeros(hi - lo)
        for j in range(substeps):
            g = target.grad(x)
            z = _rng.stream(seed, b, j, _rng.VALIDATOR).standard_normal((hi - lo, 2, d))
            x_new = x + coeffs.c_xv * v - coeffs.c_xg * g + Lc[0, 0] * z[:, 0]
            v = coeffs.eta * v - coeffs.c_vg * g + Lc[1, 0] * z[:, 0] + Lc[1, 1] * z[:, 1]
            x = x_new
            np.maximum(peak, np.linalg.norm(x - x0[lo:hi], axis=1), out=peak)
        sup[lo:hi] = peak
    a = lam * sup ** (2 * s)
    estimate = float(special.logsumexp(a) - math.log(trials))
    xn = float(np.linalg.norm(np.asarray(start.x, dtype=float)))
    vn = float(np.linalg.norm(np.asarray(start.v, dtype=float)))
    terms = {
        "drift": L ** (2 * s) * h ** (4 * s) * (1 + xn ** (2 * s * s)),
        "momentum": h ** (2 * s) * vn ** (2 * s),
        "noise": gamma**s * d**s * h ** (3 * s),
    }
    bound = C * sum(terms.values()) * lam
    return MovementReport(estimate, bound, float(lam), s, float(C), int(trials), terms)
