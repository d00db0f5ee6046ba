"""Exact ULMC integrator, twisted coordinates and chain execution.

The underdamped Langevin diffusion

    dx = v dt,   dv = -gamma v dt - grad U(x) dt + sqrt(2 gamma) dB

is solved exactly over a step of length ``h`` once ``grad U`` is frozen at
the step's starting point.  The result is an affine update plus a Gaussian
vector whose 2x2 covariance is shared by every coordinate.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import rng as _rng
from .targets import Target

__all__ = [
    "IntegratorError",
    "NonFiniteError",
    "PhasePoint",
    "StepCoefficients",
    "Ensemble",
    "SERIES_THRESHOLD",
    "step_coefficients",
    "ulmc_step",
    "run_chain",
    "geometric_checkpoints",
    "chain_maxima",
    "twist",
    "untwist",
    "twist_matrix",
    "mean_map",
    "mean_map_jacobian",
    "lipschitz_estimate",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "TRAJECTORY_FORMAT",
]

SERIES_THRESHOLD = 1e-3
TRAJECTORY_FORMAT = "ulmc-lab-trajectory/1"
_JITTER = 1e-15
_SERIES_TERMS = 10


class IntegratorError(ValueError):
    """Invalid integrator inputs."""


class NonFiniteError(FloatingPointError):
    """A gradient or state became NaN or infinite."""

    def __init__(self, message: str, x: Optional[np.ndarray] = None, step: Optional[int] = None):
        super().__init__(message)
        self.x = x
        self.step = step


@dataclass(frozen=True)
class PhasePoint:
    """Position and momentum.  Arrays may carry a leading chain axis."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if x.shape != v.shape:
            raise IntegratorError(f"position shape {x.shape} and momentum shape {v.shape} differ")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def dim(self) -> int:
        return self.x.shape[-1]

    def stacked(self) -> np.ndarray:
        """``(..., 2d)`` array ordered as (x_1..x_d, v_1..v_d)."""
        return np.concatenate([self.x, self.v], axis=-1)


@dataclass(frozen=True)
class StepCoefficients:
    """Mean coefficients and per-coordinate noise covariance of one exact step."""

    gamma: float
    h: float
    eta: float
    c_xv: float
    c_xg: float
    c_vg: float
    cov: np.ndarray
    chol: np.ndarray

    @property
    def sigma_xx(self) -> float:
        return float(self.cov[0, 0])

    @property
    def sigma_xv(self) -> float:
        return float(self.cov[0, 1])

    @property
    def sigma_vv(self) -> float:
        return float(self.cov[1, 1])


def _one_minus_exp_series(z: float) -> float:
    # 1 - e^{-z} = sum_{n>=1} (-1)^{n+1} z^n / n!
    return sum((-1) ** (n + 1) * z**n / math.factorial(n) for n in range(1, _SERIES_TERMS))


def _z_minus_one_minus_exp_series(z: float) -> float:
    # z - (1 - e^{-z}) = sum_{n>=2} (-1)^n z^n / n!
    return sum((-1) ** n * z**n / math.factorial(n) for n in range(2, _SERIES_TERMS + 1))


def _sxx_core_series(z: float) -> float:
    # z - 2(1 - e^{-z}) + (1 - e^{-2z})/2 = sum_{n>=3} (-1)^{n+1} (2^{n-1} - 2) z^n / n!
    return sum((-1) ** (n + 1) * (2 ** (n - 1) - 2) * z**n / math.factorial(n) for n in range(3, _SERIES_TERMS + 2))


def step_coefficients(gamma: float, h: float) -> StepCoefficients:
    """Coefficients of the exact step for friction ``gamma`` and step ``h``.

    For ``gamma*h < SERIES_THRESHOLD`` every quantity is evaluated from its
    Taylor series in ``z = gamma*h``, which avoids the cancellation in the
    position variance.

    Examples
    --------
    >>> c = step_coefficients(1.0, 0.1)
    >>> round(c.eta, 6), round(c.sigma_vv, 6)
    (0.904837, 0.181269)
    """
    gamma = float(gamma)
    h = float(h)
    if not (gamma > 0) or not math.isfinite(gamma):
        raise IntegratorError(f"friction gamma must be positive and finite, got {gamma}")
    if not (h > 0) or not math.isfinite(h):
        raise IntegratorError(f"step size h must be positive and finite, got {h}")
    z = gamma * h
    if z < SERIES_THRESHOLD:
        one_m = _one_minus_exp_series(z)
        one_m2 = _one_minus_exp_series(2 * z)
        eta = 1.0 - one_m
        gap = _z_minus_one_minus_exp_series(z)
        core = _sxx_core_series(z)
    else:
        one_m = -math.expm1(-z)
        one_m2 = -math.expm1(-2 * z)
        eta = math.exp(-z)
        gap = z - one_m
        core = z - 2.0 * one_m + 0.5 * one_m2
    c_xv = one_m / gamma
    c_vg = one_m / gamma
    c_xg = gap / gamma**2
    s_vv = one_m2
    s_xv = one_m**2 / gamma
    s_xx = 2.0 * core / gamma**2
    cov = np.array([[s_xx, s_xv], [s_xv, s_vv]])
    chol = _chol2(cov)
    cov.setflags(write=False)
    chol.setflags(write=False)
    return StepCoefficients(gamma=gamma, h=h, eta=eta, c_xv=c_xv, c_xg=c_xg, c_vg=c_vg, cov=cov, chol=chol)


def _chol2(cov: np.ndarray) -> np.ndarray:
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    for jitter in (0.0, _JITTER):
        a_j, c_j = a + jitter, c + jitter
        if a_j <= 0:
            continue
        l11 = math.sqrt(a_j)
        l21 = b / l11
        schur = c_j - l21 * l21
        if schur >= 0:
            return np.array([[l11, 0.0], [l21, math.sqrt(schur)]])
    raise IntegratorError(f"step covariance is numerically indefinite: {cov.tolist()}")


def _checked_grad(target: Target, x: np.ndarray, step: Optional[int] = None) -> np.ndarray:
    g = target.grad(x)
    if not np.all(np.isfinite(g)):
        bad = np.argwhere(~np.all(np.isfinite(np.atleast_2d(g)), axis=-1))
        where = np.atleast_2d(x)[bad[0][0]] if bad.size else x
        raise NonFiniteError(
            f"non-finite gradient at x={np.array2string(np.asarray(where), precision=6)}"
            + (f" (step {step})" if step is not None else ""),
            x=np.asarray(where),
            step=step,
        )
    return g


def ulmc_step(state: PhasePoint, target: Target, coeffs: StepCoefficients, noise) -> PhasePoint:
    """One exact ULMC step with the gradient frozen at ``state.x``.

    ``noise`` holds standard normals of shape ``(..., 2, d)``; row 0 feeds
    the position and row 1 the momentum through the shared Cholesky factor.
    """
    x, v = state.x, state.v
    if x.shape[-1] != target.dim:
        raise IntegratorError(f"state dimension {x.shape[-1]} does not match target dimension {target.dim}")
    noise = np.asarray(noise, dtype=float)
    if noise.shape != x.shape[:-1] + (2, x.shape[-1]):
        raise IntegratorError(f"noise shape {noise.shape} does not match state shape {x.shape} (expected (..., 2, d))")
    g = _checked_grad(target, x)
    L = coeffs.chol
    z1 = noise[..., 0, :]
    z2 = noise[..., 1, :]
    wx = L[0, 0] * z1
    wv = L[1, 0] * z1 + L[1, 1] * z2
    x_new = x + coeffs.c_xv * v - coeffs.c_xg * g + wx
    v_new = coeffs.eta * v - coeffs.c_vg * g + wv
    return PhasePoint(x_new, v_new)


@dataclass(frozen=True)
class Ensemble:
    """A batch of chains at a common step.

    ``points`` holds arrays of shape ``(n_chains, d)``.  The random streams
    are described by ``seed`` and ``block_size``; chain ``i`` draws from the
    stream of block ``i // block_size``.
    """

    points: PhasePoint
    step_index: int
    seed: int
    block_size: int = _rng.CHAIN_BLOCK

    @property
    def n_chains(self) -> int:
        return self.points.x.shape[0]

    @property
    def dim(self) -> int:
        return self.points.x.shape[1]

    @property
    def rng_state(self) -> dict:
        return {"seed": self.seed, "block_size": self.block_size, "step_index": self.step_index}


def geometric_checkpoints(n: int) -> list[int]:
    """Steps 0, 1, 2, 4, ... up to and including ``n``."""
    out = [0]
    k = 1
    while k < n:
        out.append(k)
        k *= 2
    if n > 0:
        out.append(n)
    return out


def _sample_init(init, n_chains: int, dim: int, seed: int, block_size: int) -> np.ndarray:
    from .gaussian_oracle import GaussianLaw

    if not isinstance(init, GaussianLaw):
        raise IntegratorError("init must be a GaussianLaw or an Ensemble")
    if init.dim != dim:
        raise IntegratorError(f"initial law has dimension {init.dim}, target has {dim}")
    chol = init.factor()
    out = np.empty((n_chains, 2 * dim))
    for b, start, stop in _rng.blocks(n_chains, block_size):
        z = _rng.stream(seed, b, 0, _rng.INIT_DRAW).standard_normal((stop - start, 2 * dim))
        out[start:stop] = init.mean + z @ chol.T
    return out


def _run_block(args):
    target, coeffs, x, v, b, seed, n_steps, start_step, record = args
    d = target.dim
    snaps = {}
    if start_step in record:
        snaps[start_step] = (x.copy(), v.copy())
    L = coeffs.chol
    for k in range(start_step, start_step + n_steps):
        g = target.grad(x)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in block {b} at step {k}", step=k)
        noise = _rng.stream(seed, b, k, _rng.STEP_NOISE).standard_normal((x.shape[0], 2, d))
        z1 = noise[:, 0, :]
        z2 = noise[:, 1, :]
        x_new = x + coeffs.c_xv * v - coeffs.c_xg * g + L[0, 0] * z1
        v = coeffs.eta * v - coeffs.c_vg * g + L[1, 0] * z1 + L[1, 1] * z2
        x = x_new
        if (k + 1) in record:
            snaps[k + 1] = (x.copy(), v.copy())
    return snaps


def run_chain(
    init,
    target: Target,
    plan,
    seed: int,
    *,
    n_chains: int = 1,
    checkpoints: Optional[Iterable[int]] = None,
    threads: int = 1,
    block_size: int = _rng.CHAIN_BLOCK,
) -> list[Ensemble]:
    """Run ``plan.N`` ULMC steps for an ensemble of chains.

    Parameters
    ----------
    init : GaussianLaw or Ensemble
        Initial law (sampled with the library's counter-based streams) or an
        explicit starting ensemble.
    plan : object
        Anything with ``gamma``, ``h`` and ``N`` attributes, typically a
        :class:`~ulmc_lab.schedules.SchedulePlan`.
    checkpoints : iterable of int, optional
        Steps at which to store snapshots; defaults to
        :func:`geometric_checkpoints`.  The final step is always recorded.
    threads : int
        Worker threads.  Results do not depend on this value.

    Returns
    -------
    list of Ensemble
        Snapshots in increasing step order.
    """
    gamma, h, N = float(plan.gamma), float(plan.h), int(plan.N)
    if N < 0:
        raise IntegratorError(f"number of steps must be nonnegative, got {N}")
    if isinstance(init, Ensemble):
        if init.dim != target.dim:
            raise IntegratorError(f"ensemble dimension {init.dim} does not match target dimension {target.dim}")
        x0, v0 = init.points.x.copy(), init.points.v.copy()
        start = init.step_index
        seed = init.seed if seed is None else seed
        block_size = init.block_size
    else:
        z = _sample_init(init, n_chains, target.dim, seed, block_size)
        x0, v0 = z[:, : target.dim], z[:, target.dim :]
        start = 0
    record = set(geometric_checkpoints(N) if checkpoints is None else checkpoints)
    record = {start + k for k in record if 0 <= k <= N} | {start + N}
    if N == 0:
        return [Ensemble(PhasePoint(x0, v0), start, seed, block_size)]
    coeffs = step_coefficients(gamma, h)
    jobs = [
        (target, coeffs, x0[s:e], v0[s:e], b, seed, N, start, record)
        for b, s, e in _rng.blocks(x0.shape[0], block_size)
    ]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_block, jobs))
    else:
        results = [_run_block(j) for j in jobs]
    out = []
    for k in sorted(record):
        xs = np.concatenate([r[k][0] for r in results], axis=0)
        vs = np.concatenate([r[k][1] for r in results], axis=0)
        out.append(Ensemble(PhasePoint(xs, vs), k, seed, block_size))
    return out


def _max_block(args):
    target, coeffs, x, v, b, seed, n_steps = args
    d = target.dim
    L = coeffs.chol
    mx = np.linalg.norm(x, axis=1)
    mv = np.linalg.norm(v, axis=1)
    for k in range(n_steps):
        g = target.grad(x)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in block {b} at step {k}", step=k)
        noise = _rng.stream(seed, b, k, _rng.STEP_NOISE).standard_normal((x.shape[0], 2, d))
        z1 = noise[:, 0, :]
        z2 = noise[:, 1, :]
        x_new = x + coeffs.c_xv * v - coeffs.c_xg * g + L[0, 0] * z1
        v = coeffs.eta * v - coeffs.c_vg * g + L[1, 0] * z1 + L[1, 1] * z2
        x = x_new
        if k + 1 < n_steps:
            # maxima over k = 0..N-1, the iterates the chain actually visits before stopping
            np.maximum(mx, np.linalg.norm(x, axis=1), out=mx)
            np.maximum(mv, np.linalg.norm(v, axis=1), out=mv)
    return mx, mv


def chain_maxima(init, target: Target, plan, seed: int, *, n_chains: int, threads: int = 1,
                 block_size: int = _rng.CHAIN_BLOCK) -> tuple[np.ndarray, np.ndarray]:
    """Per-chain ``max_k |x_k|`` and ``max_k |v_k|`` over ``k = 0..N-1``.

    Uses the same random streams as :func:`run_chain`, so the maxima refer to
    exactly the trajectories :func:`run_chain` would produce.
    """
    gamma, h, N = float(plan.gamma), float(plan.h), int(plan.N)
    z = _sample_init(init, n_chains, target.dim, seed, block_size)
    x0, v0 = z[:, : target.dim], z[:, target.dim :]
    coeffs = step_coefficients(gamma, h)
    jobs = [(target, coeffs, x0[s:e], v0[s:e], b, seed, N) for b, s, e in _rng.blocks(n_chains, block_size)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_max_block, jobs))
    else:
        results = [_max_block(j) for j in jobs]
    return np.concatenate([r[0] for r in results]), np.concatenate([r[1] for r in results])


def twist(state: PhasePoint, gamma: float):
    """Twisted coordinates ``(phi, psi) = (x, x + 2 v / gamma)``."""
    if not gamma > 0:
        raise IntegratorError(f"gamma must be positive, got {gamma}")
    return state.x.copy(), state.x + (2.0 / gamma) * state.v


def untwist(phi, psi, gamma: float) -> PhasePoint:
    """Inverse of :func:`twist`."""
    if not gamma > 0:
        raise IntegratorError(f"gamma must be positive, got {gamma}")
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    return PhasePoint(phi.copy(), 0.5 * gamma * (psi - phi))


def twist_matrix(d: int, gamma: float) -> np.ndarray:
    """Matrix of the twist acting on stacked ``(x, v)`` vectors of length 2d."""
    I = np.eye(d)
    return np.block([[I, np.zeros((d, d))], [I, (2.0 / gamma) * I]])


def mean_map(target: Target, gamma: float, h: float, phi, psi):
    """Noise-free ULMC step written in twisted coordinates."""
    c = step_coefficients(gamma, h)
    state = untwist(phi, psi, gamma)
    g = target.grad(state.x)
    x_new = state.x + c.c_xv * state.v - c.c_xg * g
    v_new = c.eta * state.v - c.c_vg * g
    return twist(PhasePoint(x_new, v_new), gamma)


def mean_map_jacobian(target: Target, gamma: float, h: float, phi) -> np.ndarray:
    """Jacobian of :func:`mean_map` at ``phi`` as a ``2d x 2d`` matrix.

    Rows index the outputs ``(phi', psi')`` and columns the inputs
    ``(phi, psi)``.  With ``a = exp(-gamma h)`` the blocks are

    * d phi'/d phi = (1+a)/2 I - c1 H,   d phi'/d psi = (1-a)/2 I
    * d psi'/d phi = (1-a)/2 I - c2 H,   d psi'/d psi = (1+a)/2 I

    where ``c1 = (h - (1-a)/gamma)/gamma``, ``c2 = (h + (1-a)/gamma)/gamma``
    and ``H`` is the Hessian at ``phi``.
    """
    hess = target.require_hessian()
    phi = np.asarray(phi, dtype=float)
    H = np.asarray(hess(phi), dtype=float)
    d = target.dim
    I = np.eye(d)
    if h == 0:
        return np.eye(2 * d)
    c = step_coefficients(gamma, h)
    one_m = c.c_xv * gamma  # 1 - exp(-gamma h) without cancellation
    c1 = c.c_xg
    c2 = (h + one_m / gamma) / gamma
    top = np.hstack([(1.0 - 0.5 * one_m) * I - c1 * H, 0.5 * one_m * I])
    bottom = np.hstack([0.5 * one_m * I - c2 * H, (1.0 - 0.5 * one_m) * I])
    return np.vstack([top, bottom])


def lipschitz_estimate(target: Target, gamma: float, h: float, probes) -> float:
    """Largest operator norm of the mean-map Jacobian over ``probes``.

    For a quadratic target the Jacobian is constant and the value is exact.
    """
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.size == 0 or probes.shape[0] == 0:
        raise IntegratorError("lipschitz_estimate needs at least one probe point")
    if h == 0:
        return 1.0
    if target.is_quadratic:
        probes = probes[:1]
    best = 0.0
    for p in probes:
        J = mean_map_jacobian(target, gamma, h, p)
        best = max(best, float(np.linalg.norm(J, 2)))
    return best


def write_trajectory_csv(path, snapshots: Sequence[Ensemble]) -> None:
    """Write snapshots as rows ``chain, step, x_1..x_d, v_1..v_d``.

    The first line is a comment carrying :data:`TRAJECTORY_FORMAT`.
    """
    if not snapshots:
        raise IntegratorError("no snapshots to write")
    d = snapshots[0].dim
    header = ["chain", "step"] + [f"x_{i + 1}" for i in range(d)] + [f"v_{i + 1}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {TRAJECTORY_FORMAT}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for snap in snapshots:
            for i in range(snap.n_chains):
                w.writerow(
                    [i, snap.step_index]
                    + [repr(float(u)) for u in snap.points.x[i]]
                    + [repr(float(u)) for u in snap.points.v[i]]
                )


def read_trajectory_csv(path) -> list[Ensemble]:
    """Read a file produced by :func:`write_trajectory_csv`."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# {TRAJECTORY_FORMAT}":
            raise IntegratorError(f"unsupported trajectory format line: {first!r}")
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = (len(header) - 2) // 2
    data = np.array([[float(u) for u in r] for r in body]) if body else np.empty((0, 2 + 2 * d))
    out = []
    for step in sorted(set(int(s) for s in data[:, 1])):
        sel = data[data[:, 1] == step]
        sel = sel[np.argsort(sel[:, 0])]
        out.append(Ensemble(PhasePoint(sel[:, 2 : 2 + d], sel[:, 2 + d :]), step, seed=-1))
    return out
