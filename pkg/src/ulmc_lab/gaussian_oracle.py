"""Exact laws of ULMC and of the diffusion on quadratic targets.

For ``U(x) = x^T H x / 2`` the chain is a linear Gaussian recursion
``z' = A z + w`` with ``w ~ N(0, Q)``, so every time marginal is Gaussian and
can be propagated exactly.  The module also provides closed-form
divergences between Gaussians, the hypocoercive Lyapunov functional and a
log-Sobolev tracking check in twisted coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .integrator import step_coefficients, twist_matrix
from .targets import Target, TargetError

__all__ = [
    "OracleError",
    "SingularCovarianceError",
    "GaussianLaw",
    "LinearKernel",
    "product_law",
    "target_law",
    "kernel_from_quadratic",
    "diffusion_kernel",
    "compose",
    "kernel_power",
    "propagate_law",
    "propagate_path",
    "stationary_law",
    "gaussian_kl",
    "gaussian_renyi",
    "gaussian_w2",
    "gaussian_fisher",
    "lyapunov_matrix",
    "lyapunov_functional",
    "twisted_noise_covariance",
    "LSITrackReport",
    "lsi_trajectory_check",
]


class OracleError(ValueError):
    """Invalid input to an exact-law computation."""


class SingularCovarianceError(OracleError):
    """A covariance needed for a density ratio is singular."""


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    """Gaussian law on R^{2d}, coordinates ordered (x_1..x_d, v_1..v_d)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise OracleError(f"covariance shape {cov.shape} does not match mean length {n}")
        if n % 2:
            raise OracleError("phase-space laws need an even number of coordinates")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise OracleError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        if n and np.linalg.eigvalsh(cov)[0] < -1e-12 * scale:
            raise OracleError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0] // 2

    def factor(self) -> np.ndarray:
        """A square root ``F`` with ``F F^T = cov`` (symmetric PSD square root)."""
        w, V = np.linalg.eigh(self.cov)
        return V * np.sqrt(np.clip(w, 0.0, None))

    def marginal_x(self) -> tuple[np.ndarray, np.ndarray]:
        d = self.dim
        return self.mean[:d], self.cov[:d, :d]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True, eq=False)
class LinearKernel:
    """Affine Gaussian transition ``z' = A z + w``, ``w ~ N(0, Q)``."""

    A: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if A.shape != Q.shape or A.shape[0] != A.shape[1]:
            raise OracleError(f"kernel shapes A{A.shape} and Q{Q.shape} are incompatible")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))


def product_law(x_cov, v_cov=None, x_mean=None, v_mean=None) -> GaussianLaw:
    """Independent position and momentum blocks.

    Scalars are broadcast to multiples of the identity when the other
    argument fixes the dimension.
    """
    x_cov = np.atleast_2d(np.asarray(x_cov, dtype=float))
    d = x_cov.shape[0]
    if v_cov is None:
        v_cov = np.eye(d)
    v_cov = np.asarray(v_cov, dtype=float)
    if v_cov.ndim == 0:
        v_cov = float(v_cov) * np.eye(d)
    mean = np.concatenate(
        [np.zeros(d) if x_mean is None else np.asarray(x_mean, float), np.zeros(d) if v_mean is None else np.asarray(v_mean, float)]
    )
    cov = np.zeros((2 * d, 2 * d))
    cov[:d, :d] = x_cov
    cov[d:, d:] = v_cov
    return GaussianLaw(mean, cov)


def target_law(target: Target) -> GaussianLaw:
    """Stationary law ``N(0, H^{-1}) x N(0, I)`` of the diffusion."""
    H = _require_quadratic(target)
    return product_law(np.linalg.inv(H))


def _require_quadratic(target: Target) -> np.ndarray:
    if target.quadratic is None:
        raise TargetError(f"target {target.name!r} is not quadratic; the exact oracle needs a constant Hessian")
    return np.asarray(target.quadratic)


def kernel_from_quadratic(target: Target, gamma: float, h: float) -> LinearKernel:
    """Exact ULMC transition for a quadratic target."""
    H = _require_quadratic(target)
    d = target.dim
    c = step_coefficients(gamma, h)
    I = np.eye(d)
    A = np.block([[I - c.c_xg * H, c.c_xv * I], [-c.c_vg * H, c.eta * I]])
    Q = np.kron(c.cov, I)
    return LinearKernel(A, Q)


def diffusion_kernel(target: Target, gamma: float, t: float) -> LinearKernel:
    """Exact transition of the diffusion itself over time ``t``.

    Uses the block matrix exponential of Van Loan to get both the drift
    propagator and the integrated noise covariance.
    """
    H = _require_quadratic(target)
    d = target.dim
    I = np.eye(d)
    Z = np.zeros((d, d))
    B = np.block([[Z, I], [-H, -gamma * I]])
    D = np.block([[Z, Z], [Z, 2.0 * gamma * I]])
    n = 2 * d
    M = np.block([[-B, D], [np.zeros((n, n)), B.T]]) * t
    E = linalg.expm(M)
    A = E[n:, n:].T
    Q = A @ E[:n, n:]
    return LinearKernel(A, Q)


def compose(first: LinearKernel, second: LinearKernel) -> LinearKernel:
    """Kernel of applying ``first`` then ``second``."""
    return LinearKernel(second.A @ first.A, second.A @ first.Q @ second.A.T + second.Q)


def kernel_power(k: LinearKernel, n: int) -> LinearKernel:
    """``n``-fold composition by repeated squaring."""
    if n < 0:
        raise OracleError(f"number of steps must be nonnegative, got {n}")
    size = k.A.shape[0]
    result = LinearKernel(np.eye(size), np.zeros((size, size)))
    base = k
    while n:
        if n & 1:
            result = compose(result, base)
        n >>= 1
        if n:
            base = compose(base, base)
    return result


def _apply(law: GaussianLaw, k: LinearKernel) -> GaussianLaw:
    with np.errstate(over="ignore", invalid="ignore"):
        mean = k.A @ law.mean
        cov = k.A @ law.cov @ k.A.T + k.Q
        cov = 0.5 * (cov + cov.T)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise OverflowError("law propagation overflowed; the kernel is not contractive over this horizon")
    return GaussianLaw(mean, cov)


def propagate_law(law: GaussianLaw, k: LinearKernel, n: int) -> GaussianLaw:
    """Apply ``k`` to ``law`` ``n`` times, re-symmetrising after each step."""
    if n < 0:
        raise OracleError(f"number of steps must be nonnegative, got {n}")
    if law.mean.shape[0] != k.A.shape[0]:
        raise OracleError("law and kernel dimensions differ")
    for _ in range(int(n)):
        law = _apply(law, k)
    return law


def propagate_path(law: GaussianLaw, k: LinearKernel, steps: Sequence[int]) -> list[GaussianLaw]:
    """Laws at each of the increasing step counts in ``steps``."""
    out = []
    current, at = law, 0
    for s in steps:
        if s < at:
            raise OracleError("steps must be nondecreasing")
        current = propagate_law(current, k, s - at)
        at = s
        out.append(current)
    return out


def stationary_law(k: LinearKernel, *, tol: float = 1e-13, max_doublings: int = 200) -> GaussianLaw:
    """Invariant law of ``k``: solves ``S = A S A^T + Q``.

    The sum ``S = sum_j A^j Q (A^j)^T`` is accumulated by the doubling form of
    the fixed-point iteration, ``S <- S + A S A^T``, ``A <- A^2``, and stopped
    once the fixed-point residual is below ``tol`` (relative to the scale of
    ``S``) in max-norm.
    """
    A, Q = k.A, k.Q
    rho = float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0
    if rho >= 1.0:
        raise OracleError(f"kernel is not contractive (spectral radius {rho:.6g} >= 1)")
    S = Q.copy()
    P = A.copy()
    for _ in range(max_doublings):
        S = S + P @ S @ P.T
        S = 0.5 * (S + S.T)
        P = P @ P
        resid = np.max(np.abs(A @ S @ A.T + Q - S))
        if resid <= tol * max(1.0, float(np.max(np.abs(S)))) and np.max(np.abs(P)) < 1e-17:
            break
    else:  # pragma: no cover - only for pathological spectra
        raise OracleError("stationary covariance iteration did not converge")
    return GaussianLaw(np.zeros(A.shape[0]), S)


def _check_pair(p: GaussianLaw, q: GaussianLaw):
    if p.mean.shape != q.mean.shape:
        raise OracleError(f"dimension mismatch: {p.mean.shape[0]} vs {q.mean.shape[0]}")


def _chol(S: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"{what} covariance is singular") from exc


def _relative_eigs(p: GaussianLaw, q: GaussianLaw):
    """Eigenvalues of q.cov^{-1/2} p.cov q.cov^{-1/2} and the whitened mean gap."""
    Lq = _chol(q.cov, "reference")
    _chol(p.cov, "first")
    W = linalg.solve_triangular(Lq, p.cov, lower=True)
    W = linalg.solve_triangular(Lq, W.T, lower=True)
    lam = np.linalg.eigvalsh(0.5 * (W + W.T))
    delta = linalg.solve_triangular(Lq, p.mean - q.mean, lower=True)
    return lam, delta, Lq


def gaussian_kl(p: GaussianLaw, q: GaussianLaw) -> float:
    """KL(p || q) in nats."""
    _check_pair(p, q)
    lam, delta, _ = _relative_eigs(p, q)
    if lam[0] <= 0:
        raise SingularCovarianceError("first covariance is singular")
    mu = lam - 1.0
    # lambda - 1 - log(lambda) without cancellation near lambda = 1
    trace_term = float(np.sum(mu - np.log1p(mu)))
    return 0.5 * (trace_term + float(delta @ delta))


def gaussian_renyi(order: float, p: GaussianLaw, q: GaussianLaw) -> float:
    """Rényi divergence of the given order (> 1) of p from q.

    Returns ``math.inf`` when ``order * q.cov^{-1} + (1 - order) * p.cov^{-1}``
    is not positive definite, in which case the divergence is infinite.
    """
    _check_pair(p, q)
    a = float(order)
    if not a > 1:
        raise OracleError(f"Rényi order must exceed 1, got {order}")
    _, delta, _ = _relative_eigs(p, q)
    w, V = np.linalg.eigh(_relative_matrix(p, q))
    if w[0] <= 0:
        raise SingularCovarianceError("first covariance is singular")
    return _renyi_closed(a, w, V.T @ delta)


def _relative_matrix(p: GaussianLaw, q: GaussianLaw) -> np.ndarray:
    Lq = _chol(q.cov, "reference")
    W = linalg.solve_triangular(Lq, p.cov, lower=True)
    W = linalg.solve_triangular(Lq, W.T, lower=True)
    return 0.5 * (W + W.T)


def _renyi_closed(a: float, w: np.ndarray, dr: np.ndarray) -> float:
    # p = N(dr, diag(w)), q = N(0, I) in a common orthonormal frame:
    # R_a = a/2 * sum dr^2 / S_i - 1/(2(a-1)) * sum log(S_i / w_i^{1-a})
    # with S_i = a + (1-a) w_i the eigenvalues of the mixed covariance a*Sq + (1-a)*Sp.
    S = a + (1.0 - a) * w
    if np.any(S <= 0):
        return math.inf
    quad = float(np.sum(dr * dr / S))
    log_term = float(np.sum(np.log(S) - (1.0 - a) * np.log(w)))
    return 0.5 * a * quad - log_term / (2.0 * (a - 1.0))


def gaussian_w2(p: GaussianLaw, q: GaussianLaw) -> float:
    """2-Wasserstein distance between Gaussians (Bures formula)."""
    _check_pair(p, q)
    root_q = linalg.sqrtm(q.cov)
    cross = linalg.sqrtm(root_q @ p.cov @ root_q)
    bures = float(np.trace(p.cov) + np.trace(q.cov) - 2.0 * np.real(np.trace(cross)))
    gap = p.mean - q.mean
    return math.sqrt(max(0.0, float(gap @ gap) + max(bures, 0.0)))


def gaussian_fisher(p: GaussianLaw, q: GaussianLaw, weight: Optional[np.ndarray] = None) -> float:
    """Weighted relative Fisher information ``E_p |W^{1/2} grad log(p/q)|^2``.

    For Gaussians ``grad log(p/q)(z) = B z + c`` is affine, and the
    expectation reduces to ``tr(W B S_p B^T) + |W^{1/2} (B m_p + c)|^2``.
    """
    _check_pair(p, q)
    n = p.mean.shape[0]
    W = np.eye(n) if weight is None else np.asarray(weight, dtype=float)
    Pp = linalg.cho_solve((_chol(p.cov, "first"), True), np.eye(n))
    Pq = linalg.cho_solve((_chol(q.cov, "reference"), True), np.eye(n))
    B = Pq - Pp
    # B m_p + c with c = Pp m_p - Pq m_q
    r = Pq @ (p.mean - q.mean)
    return float(np.trace(W @ B @ p.cov @ B.T) + r @ W @ r)


def lyapunov_matrix(L: float, d: int) -> np.ndarray:
    """Weight ``[[1/(4L), 1/sqrt(2L)], [1/sqrt(2L), 4]] (x) I_d``."""
    if not L > 0:
        raise OracleError(f"L must be positive, got {L}")
    base = np.array([[1.0 / (4.0 * L), 1.0 / math.sqrt(2.0 * L)], [1.0 / math.sqrt(2.0 * L), 4.0]])
    det = base[0, 0] * base[1, 1] - base[0, 1] ** 2
    assert det > 0, "Lyapunov weight must be positive definite"
    return np.kron(base, np.eye(d))


def lyapunov_functional(p: GaussianLaw, target: GaussianLaw, L: float) -> float:
    """KL plus the weighted Fisher information of ``p`` relative to ``target``."""
    return gaussian_kl(p, target) + gaussian_fisher(p, target, lyapunov_matrix(L, p.dim))


def twisted_noise_covariance(gamma: float, h: float) -> np.ndarray:
    """Per-coordinate covariance of the step noise in twisted coordinates."""
    c = step_coefficients(gamma, h)
    M = np.array([[1.0, 0.0], [1.0, 2.0 / gamma]])
    return M @ c.cov @ M.T


@dataclass
class LSITrackReport:
    """Result of :func:`lsi_trajectory_check`."""

    steps: np.ndarray
    constants: np.ndarray
    bounds: np.ndarray
    floor: float
    slack: float
    margin: float
    argmax_step: int
    params: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.margin <= 0.0

    def to_dict(self) -> dict:
        return {
            "margin": self.margin,
            "argmax_step": self.argmax_step,
            "floor": self.floor,
            "slack": self.slack,
            "passed": self.passed,
            "initial_constant": float(self.constants[0]),
            "final_constant": float(self.constants[-1]),
            **self.params,
        }


def lsi_trajectory_check(
    target: Target,
    gamma: float,
    h: float,
    N: int,
    init: GaussianLaw,
    *,
    slack_constant: float = 20.0,
    floor: Optional[float] = None,
) -> LSITrackReport:
    """Track the log-Sobolev constant of the chain in twisted coordinates.

    At each step the constant is ``lambda_max(M S_k M^T)`` with ``M`` the
    twist, and it is compared against
    ``exp(-m sqrt(2/L) k h) C_0 + floor + slack_constant * h sqrt(L) / m``.
    ``floor`` defaults to ``2/m``.  The report's ``margin`` is the largest
    excess of the constant over the bound (nonpositive when the bound holds).
    """
    H = _require_quadratic(target)
    m = float(np.linalg.eigvalsh(H)[0])
    L = float(np.linalg.eigvalsh(H)[-1])
    if m <= 0:
        raise OracleError("lsi_trajectory_check needs a strongly convex target")
    d = target.dim
    k = kernel_from_quadratic(target, gamma, h)
    M = twist_matrix(d, gamma)
    floor = 2.0 / m if floor is None else float(floor)
    slack = slack_constant * h * math.sqrt(L) / m
    rate = m * math.sqrt(2.0 / L)
    consts = np.empty(N + 1)
    S = init.cov
    for step in range(N + 1):
        consts[step] = np.linalg.eigvalsh(M @ S @ M.T)[-1]
        if step < N:
            S = k.A @ S @ k.A.T + k.Q
            S = 0.5 * (S + S.T)
    steps = np.arange(N + 1)
    bounds = np.exp(-rate * steps * h) * consts[0] + floor + slack
    excess = consts - bounds
    i = int(np.argmax(excess))
    return LSITrackReport(
        steps=steps,
        constants=consts,
        bounds=bounds,
        floor=floor,
        slack=slack,
        margin=float(excess[i]),
        argmax_step=i,
        params={"gamma": gamma, "h": h, "N": N, "m": m, "L": L, "slack_constant": slack_constant},
    )
