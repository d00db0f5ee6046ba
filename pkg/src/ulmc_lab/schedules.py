"""Parameter planners for ULMC.

Each planner turns regularity constants and a target accuracy into a
friction ``gamma``, a step size ``h``, a horizon ``T`` and an iteration
count ``N = ceil(T / h)``.  The complexity statements these planners follow
hide absolute constants and polylogarithmic factors; both are exposed
through :class:`PlannerConstants`.

Polylog convention
------------------
A log factor ``log(arg)`` is evaluated as ``log(max(arg, e))`` so that it is
never below 1.  ``PlannerConstants.log_factor`` and
``PlannerConstants.horizon_log`` override the computed step-size divisor and
horizon factor respectively; setting both to 1 freezes the logs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .gaussian_oracle import GaussianLaw, product_law

__all__ = [
    "PlannerError",
    "PlanWarning",
    "PlannerConstants",
    "SchedulePlan",
    "polylog",
    "plan_kl_strongly_logconcave",
    "plan_tv_lsi",
    "poincare_rate",
    "optimal_poincare_gamma",
    "plan_renyi_poincare",
    "girsanov_step_bound",
    "initialization",
    "apply_guards",
]


class PlannerError(ValueError):
    """Planner inputs outside the range where the planner's guarantee applies."""


class PlanWarning(UserWarning):
    """A plan was adjusted (for example its step size was reduced)."""


def polylog(arg: float) -> float:
    """``log(max(arg, e))``: a log factor that never drops below 1."""
    return math.log(max(float(arg), math.e))


@dataclass(frozen=True)
class PlannerConstants:
    """Multipliers standing in for hidden absolute constants.

    ``log_factor`` divides the step size and ``horizon_log`` multiplies the
    horizon; ``None`` means "compute from the inputs".
    """

    c_h: float = 1.0
    c_T: float = 1.0
    c_gamma: float = 1.0
    C0: float = 1.0
    log_factor: Optional[float] = None
    horizon_log: Optional[float] = None

    def __post_init__(self):
        for name in ("c_h", "c_T", "c_gamma", "C0"):
            if not getattr(self, name) > 0:
                raise PlannerError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("log_factor", "horizon_log"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise PlannerError(f"{name} must be positive when given, got {val}")

    @classmethod
    def frozen_logs(cls, **kw) -> "PlannerConstants":
        """Constants with both log factors fixed to 1."""
        return cls(log_factor=1.0, horizon_log=1.0, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SchedulePlan:
    """A complete parameter choice for one ULMC run."""

    planner: str
    gamma: float
    h: float
    N: int
    T: float
    metric: str
    eps: float
    init_var: float
    beta: float
    dim: int
    constants: PlannerConstants = field(default_factory=PlannerConstants)
    renyi_order: Optional[float] = None
    h_theorem: Optional[float] = None
    log_factor: float = 1.0
    horizon_log: float = 1.0
    warnings: tuple = ()
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.gamma > 0 and self.h > 0):
            raise PlannerError(f"plan needs positive gamma and h (got {self.gamma}, {self.h})")
        if self.N < 0:
            raise PlannerError(f"plan needs N >= 0, got {self.N}")
        if not (self.T > 0 or (self.N == 0 and self.T == 0)):
            raise PlannerError(f"plan needs a positive horizon T, got {self.T}")

    @property
    def horizon(self) -> float:
        """Time actually simulated, ``N * h``."""
        return self.N * self.h

    def init_law(self) -> GaussianLaw:
        """Initial law: position variance ``init_var``, unit momentum variance."""
        return product_law(self.init_var * np.eye(self.dim))

    def with_overrides(self, *, gamma=None, h=None, N=None) -> "SchedulePlan":
        """Copy with explicit values; ``T`` follows ``N * h`` when either changes."""
        new_gamma = self.gamma if gamma is None else float(gamma)
        new_h = self.h if h is None else float(h)
        if N is None:
            new_N = self.N if h is None else max(1, math.ceil(self.T / new_h - 1e-12))
        else:
            new_N = int(N)
        new_T = self.T if (h is None and N is None) else new_N * new_h
        notes = list(self.warnings)
        if gamma is not None or h is not None or N is not None:
            notes.append("explicit overrides applied: " + ", ".join(
                f"{k}={v}" for k, v in (("gamma", gamma), ("h", h), ("N", N)) if v is not None
            ))
        return replace(self, gamma=new_gamma, h=new_h, N=new_N, T=new_T, warnings=tuple(notes))

    def to_dict(self) -> dict:
        return {
            "planner": self.planner,
            "gamma": self.gamma,
            "h": self.h,
            "N": self.N,
            "T": self.T,
            "horizon": self.horizon,
            "metric": self.metric,
            "renyi_order": self.renyi_order,
            "eps": self.eps,
            "dim": self.dim,
            "init": {"position_variance": self.init_var, "momentum_variance": 1.0, "beta": self.beta},
            "h_theorem": self.h_theorem,
            "log_factor": self.log_factor,
            "horizon_log": self.horizon_log,
            "constants": self.constants.to_dict(),
            "warnings": list(self.warnings),
            "inputs": dict(self.inputs),
        }


def _positive(**kw):
    for k, v in kw.items():
        if not (v > 0) or not math.isfinite(v):
            raise PlannerError(f"{k} must be positive and finite, got {v}")


def _check_eps(eps):
    if not (0 < eps <= 1):
        raise PlannerError(f"eps must lie in (0, 1], got {eps}")


def apply_guards(h: float, *, L: float, gamma: float, d: int, beta: float = 0.0) -> tuple[float, Optional[str]]:
    """Cap ``h`` at ``min((L+beta)^{-1/2}, 1/gamma, d^{-1/2})``.

    Returns the possibly reduced step and a warning message (or ``None``).
    """
    cap = min(1.0 / math.sqrt(L + beta), 1.0 / gamma, 1.0 / math.sqrt(d))
    if h > cap:
        msg = f"step size reduced from {h:.6g} to {cap:.6g} to satisfy h <= min((L+beta)^-1/2, 1/gamma, d^-1/2)"
        warnings.warn(msg, PlanWarning, stacklevel=3)
        return cap, msg
    return h, None


def _finish(
    planner: str,
    *,
    gamma: float,
    h_theorem: float,
    T: float,
    L: float,
    d: int,
    eps: float,
    metric: str,
    k: PlannerConstants,
    log_factor: float,
    horizon_log: float,
    enforce_guards: bool,
    beta: Optional[float],
    renyi_order: Optional[float] = None,
    inputs: Optional[dict] = None,
) -> SchedulePlan:
    notes = []
    if beta is None:
        beta = gamma / T
        if beta > 1.0:
            notes.append(f"beta = gamma/T = {beta:.6g} capped at 1")
            beta = 1.0
    if beta < 0:
        raise PlannerError(f"beta must be nonnegative, got {beta}")
    h = h_theorem
    if enforce_guards:
        h, msg = apply_guards(h, L=L, gamma=gamma, d=d)
        if msg:
            notes.append(msg)
    N = max(1, math.ceil(T / h - 1e-12))
    return SchedulePlan(
        planner=planner,
        gamma=gamma,
        h=h,
        N=N,
        T=T,
        metric=metric,
        eps=eps,
        init_var=1.0 / (2.0 * L + beta),
        beta=beta,
        dim=d,
        constants=k,
        renyi_order=renyi_order,
        h_theorem=h_theorem,
        log_factor=log_factor,
        horizon_log=horizon_log,
        warnings=tuple(notes),
        inputs=inputs or {},
    )


def plan_kl_strongly_logconcave(
    m: float,
    L: float,
    d: int,
    eps: float,
    k: PlannerConstants = PlannerConstants(),
    *,
    enforce_guards: bool = True,
    beta: Optional[float] = None,
) -> SchedulePlan:
    """KL accuracy ``eps^2`` for an m-strongly log-concave, L-smooth target.

    ``gamma = c_gamma 2 sqrt(2L)``, ``h = c_h eps sqrt(m) / (L sqrt(d))`` over a
    log factor, ``T = c_T sqrt(L)/m log(kappa d / eps^2)``.

    Examples
    --------
    >>> p = plan_kl_strongly_logconcave(1, 1, 1, 0.5, PlannerConstants(log_factor=1.0), enforce_guards=False)
    >>> p.h, round(p.T, 4), p.N
    (0.5, 1.3863, 3)
    """
    _positive(m=m, L=L)
    if m > L:
        raise PlannerError(f"need m <= L, got m={m}, L={L}")
    _check_eps(eps)
    d = int(d)
    kappa = L / m
    ell = polylog(kappa * d / eps**2)
    log_factor = ell if k.log_factor is None else k.log_factor
    horizon_log = ell if k.horizon_log is None else k.horizon_log
    gamma = k.c_gamma * 2.0 * math.sqrt(2.0 * L)
    h = k.c_h * eps * math.sqrt(m) / (L * math.sqrt(d)) / log_factor
    T = k.c_T * math.sqrt(L) / m * horizon_log
    return _finish(
        "kl_strongly_logconcave",
        gamma=gamma,
        h_theorem=h,
        T=T,
        L=L,
        d=d,
        eps=eps,
        metric="KL",
        k=k,
        log_factor=log_factor,
        horizon_log=horizon_log,
        enforce_guards=enforce_guards,
        beta=beta,
        inputs={"m": m, "L": L, "d": d, "eps": eps},
    )


def plan_tv_lsi(
    C_LSI: float,
    L: float,
    d: int,
    eps: float,
    k: PlannerConstants = PlannerConstants(),
    *,
    enforce_guards: bool = True,
    beta: Optional[float] = None,
) -> SchedulePlan:
    """Total variation accuracy ``eps`` under a log-Sobolev inequality."""
    _positive(C_LSI=C_LSI, L=L, eps=eps)
    if eps > 1:
        raise PlannerError(f"eps must not exceed 1, got {eps}")
    d = int(d)
    ell = polylog(d / eps**2)
    log_factor = ell if k.log_factor is None else k.log_factor
    horizon_log = ell if k.horizon_log is None else k.horizon_log
    gamma = k.c_gamma * math.sqrt(L)
    h = k.c_h * eps / (math.sqrt(C_LSI) * L * math.sqrt(d)) / log_factor
    T = k.c_T * C_LSI * math.sqrt(L) * horizon_log
    return _finish(
        "tv_lsi",
        gamma=gamma,
        h_theorem=h,
        T=T,
        L=L,
        d=d,
        eps=eps,
        metric="TV",
        k=k,
        log_factor=log_factor,
        horizon_log=horizon_log,
        enforce_guards=enforce_guards,
        beta=beta,
        inputs={"C_LSI": C_LSI, "L": L, "d": d, "eps": eps},
    )


def poincare_rate(C_PI: float, R: float, gamma: float, C0: float = 1.0) -> float:
    """Continuous-time decay rate under a Poincaré inequality.

    ``q(gamma) = (gamma / C_PI) / (C0 (1/C_PI + R^2 + gamma^2))``.
    """
    _positive(C_PI=C_PI, gamma=gamma, C0=C0)
    if R < 0:
        raise PlannerError(f"R must be nonnegative, got {R}")
    return (gamma / C_PI) / (C0 * (1.0 / C_PI + R * R + gamma * gamma))


def optimal_poincare_gamma(C_PI: float, R: float = 0.0) -> float:
    """Friction maximising :func:`poincare_rate`: ``sqrt(1/C_PI + R^2)``."""
    _positive(C_PI=C_PI)
    return math.sqrt(1.0 / C_PI + R * R)


def plan_renyi_poincare(
    C_PI: float,
    L: float,
    s: float,
    d: int,
    eps: float,
    xi: float,
    R: float = 0.0,
    k: PlannerConstants = PlannerConstants(),
    *,
    gamma: Optional[float] = None,
    enforce_guards: bool = True,
    beta: Optional[float] = None,
) -> SchedulePlan:
    """Rényi accuracy of order ``2 - xi`` under a Poincaré inequality.

    The step is
    ``h = c_h gamma^{1/(2s)} eps^{1/s} xi^{1/s} q^{1/(2s)} / (L^{1/s} sqrt(d) (L v d)^{1/(2s)})``
    and the horizon ``T = c_T (L v d) / q`` so that
    ``N = L^{1/s} sqrt(d) (L v d)^{1 + 1/(2s)} / (gamma^{1/(2s)} eps^{1/s} xi^{1/s} q^{1 + 1/(2s)})``.
    """
    _positive(C_PI=C_PI, L=L)
    if not (0 < s <= 1):
        raise PlannerError(f"s must lie in (0, 1], got {s}")
    if not (0 < xi < 1):
        raise PlannerError(f"xi must lie in (0, 1), got {xi}")
    _check_eps(eps)
    d = int(d)
    if gamma is None:
        gamma = k.c_gamma * optimal_poincare_gamma(C_PI, R)
    _positive(gamma=gamma)
    q = poincare_rate(C_PI, R, gamma, k.C0)
    Ld = max(L, float(d))
    ell = polylog(d / eps)
    log_factor = ell if k.log_factor is None else k.log_factor
    horizon_log = ell if k.horizon_log is None else k.horizon_log
    inv_s = 1.0 / s
    h = (
        k.c_h
        * gamma ** (0.5 * inv_s)
        * eps**inv_s
        * xi**inv_s
        * q ** (0.5 * inv_s)
        / (L**inv_s * math.sqrt(d) * Ld ** (0.5 * inv_s))
        / log_factor
    )
    T = k.c_T * Ld / q * horizon_log
    return _finish(
        "renyi_poincare",
        gamma=gamma,
        h_theorem=h,
        T=T,
        L=L,
        d=d,
        eps=eps,
        metric="Renyi",
        k=k,
        log_factor=log_factor,
        horizon_log=horizon_log,
        enforce_guards=enforce_guards,
        beta=beta,
        renyi_order=2.0 - xi,
        inputs={"C_PI": C_PI, "L": L, "s": s, "d": d, "eps": eps, "xi": xi, "R": R, "rate": q},
    )


def girsanov_step_bound(
    gamma: float,
    L: float,
    s: float,
    T: float,
    q: float,
    d: int,
    R2_init: float,
    k: PlannerConstants = PlannerConstants(),
    *,
    eps: float = 1.0,
) -> float:
    """Largest step for which the discretisation error in Rényi order ``q`` is ``eps``.

    ``h = c_h gamma^{1/(2s)} eps^{1/s} / (L^{1/s} T^{1/(2s)} q^{1/s} sqrt(d + R2_init))``
    divided by ``k.log_factor`` when given.
    """
    _positive(gamma=gamma, L=L, T=T, eps=eps)
    if not (0 < s <= 1):
        raise PlannerError(f"s must lie in (0, 1], got {s}")
    if q < 1:
        raise PlannerError(f"Rényi order q must be at least 1, got {q}")
    if R2_init < 0:
        raise PlannerError(f"R2_init must be nonnegative, got {R2_init}")
    inv_s = 1.0 / s
    h = k.c_h * gamma ** (0.5 * inv_s) * eps**inv_s / (L**inv_s * T ** (0.5 * inv_s) * q**inv_s * math.sqrt(d + R2_init))
    return h / (k.log_factor if k.log_factor is not None else 1.0)


def initialization(d: int, L: float, beta: float = 0.0) -> GaussianLaw:
    """``N(0, I/(2L + beta)) x N(0, I)`` on position and momentum."""
    _positive(L=L)
    if beta < 0:
        raise PlannerError(f"beta must be nonnegative, got {beta}")
    if int(d) != d or d <= 0:
        raise PlannerError(f"dimension must be a positive integer, got {d}")
    return product_law(np.eye(int(d)) / (2.0 * L + beta))
