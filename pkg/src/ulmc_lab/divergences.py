"""Sample-based distance diagnostics.

These complement the exact Gaussian oracle on targets without a closed-form
law.  Nonparametric high-dimensional KL estimators are deliberately absent:
their bias at desk-scale sample sizes swamps the effects being measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .gaussian_oracle import GaussianLaw

__all__ = ["DivergenceError", "SampleSet", "w2_1d", "moment_error", "MomentReport", "pinsker_tv_bound"]


class DivergenceError(ValueError):
    """Invalid input to a sample diagnostic."""


@dataclass(frozen=True, eq=False)
class SampleSet:
    """An ``n x d`` point cloud with optional weights and provenance."""

    points: np.ndarray
    weights: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise DivergenceError(f"points must be an n x d matrix, got shape {pts.shape}")
        if pts.shape[0] < 2:
            raise DivergenceError("a sample set needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise DivergenceError("sample points must be finite")
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (pts.shape[0],) or np.any(w < 0) or not w.sum() > 0:
                raise DivergenceError("weights must be nonnegative, one per point, with positive sum")
            object.__setattr__(self, "weights", w / w.sum())

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _as_set(a) -> SampleSet:
    return a if isinstance(a, SampleSet) else SampleSet(a)


def w2_1d(a, b) -> float:
    """Quantile-coupling W2 distance between two one-dimensional samples.

    Equal sizes pair sorted order statistics.  Otherwise both empirical
    quantile functions are evaluated on a common midpoint grid.
    """
    a, b = _as_set(a), _as_set(b)
    if a.dim != 1 or b.dim != 1:
        raise DivergenceError("w2_1d needs one-dimensional samples")
    if a.weights is not None or b.weights is not None:
        raise DivergenceError("w2_1d does not support weighted samples")
    xa = np.sort(a.points[:, 0])
    xb = np.sort(b.points[:, 0])
    if xa.shape[0] == xb.shape[0]:
        diff = xa - xb
    else:
        n = max(xa.shape[0], xb.shape[0])
        u = (np.arange(n) + 0.5) / n
        diff = np.quantile(xa, u) - np.quantile(xb, u)
    return float(math.sqrt(np.mean(diff * diff)))


@dataclass
class MomentReport:
    mean_error: float
    cov_error: float
    norm_error: float
    mean_z: np.ndarray
    sample_mean_norm: float
    sample_mean_norm_se: float
    reference_mean_norm: Optional[float]

    def to_dict(self) -> dict:
        return {
            "mean_error": self.mean_error,
            "cov_error": self.cov_error,
            "norm_error": self.norm_error,
            "max_abs_mean_z": float(np.max(np.abs(self.mean_z))),
            "mean_norm": self.sample_mean_norm,
            "mean_norm_se": self.sample_mean_norm_se,
            "reference_mean_norm": self.reference_mean_norm,
        }


def _gaussian_mean_norm(mean: np.ndarray, cov: np.ndarray, n: int = 400_000, seed: int = 12345) -> float:
    d = mean.shape[0]
    if np.allclose(mean, 0) and np.allclose(cov, cov[0, 0] * np.eye(d)):
        from scipy.special import gammaln

        return float(math.sqrt(2 * cov[0, 0]) * math.exp(gammaln((d + 1) / 2) - gammaln(d / 2)))
    rng = np.random.default_rng(seed)
    return float(np.mean(np.linalg.norm(rng.multivariate_normal(mean, cov, size=n), axis=1)))


def moment_error(a, reference: Union[GaussianLaw, dict, Sequence, None] = None) -> MomentReport:
    """Relative errors of the mean, covariance and ``E|x|``.

    ``reference`` may be a :class:`GaussianLaw` (its position marginal is
    used when its dimension is half the sample dimension), a dict with keys
    ``mean``, ``cov`` and optionally ``mean_norm``, or ``None`` to report
    only the sample moments.  Mean errors are absolute norms scaled by the
    reference's largest standard deviation; covariance errors are relative
    in Frobenius norm.
    """
    a = _as_set(a)
    pts = a.points
    n, d = pts.shape
    w = a.weights if a.weights is not None else np.full(n, 1.0 / n)
    mean = w @ pts
    centred = pts - mean
    cov = (centred * w[:, None]).T @ centred * (n / (n - 1))
    norms = np.linalg.norm(pts, axis=1)
    mnorm = float(w @ norms)
    mnorm_se = float(np.sqrt(np.sum(w * (norms - mnorm) ** 2) / n))
    if reference is None:
        ref_mean, ref_cov, ref_norm = np.zeros(d), None, None
    elif isinstance(reference, GaussianLaw):
        if reference.mean.shape[0] == 2 * d:
            ref_mean, ref_cov = reference.marginal_x()
        elif reference.mean.shape[0] == d:
            ref_mean, ref_cov = reference.mean, reference.cov
        else:
            raise DivergenceError("reference law dimension does not match the samples")
        ref_norm = _gaussian_mean_norm(ref_mean, ref_cov)
    elif isinstance(reference, dict):
        ref_mean = np.asarray(reference.get("mean", np.zeros(d)), dtype=float)
        ref_cov = None if reference.get("cov") is None else np.asarray(reference["cov"], dtype=float)
        ref_norm = reference.get("mean_norm")
    else:
        seq = list(reference)
        ref_mean = np.asarray(seq[0], dtype=float)
        ref_cov = np.asarray(seq[1], dtype=float) if len(seq) > 1 else None
        ref_norm = float(seq[2]) if len(seq) > 2 else None
    if ref_mean.shape != (d,):
        raise DivergenceError(f"reference mean has shape {ref_mean.shape}, samples have dimension {d}")
    sd = np.sqrt(np.diag(cov)) / math.sqrt(n)
    mean_z = (mean - ref_mean) / np.where(sd > 0, sd, 1.0)
    if ref_cov is not None:
        scale = math.sqrt(float(np.max(np.diag(ref_cov))))
        mean_err = float(np.linalg.norm(mean - ref_mean) / scale)
        cov_err = float(np.linalg.norm(cov - ref_cov) / np.linalg.norm(ref_cov))
    else:
        mean_err = float(np.linalg.norm(mean - ref_mean))
        cov_err = math.nan
    norm_err = abs(mnorm - ref_norm) / ref_norm if ref_norm else math.nan
    return MomentReport(mean_err, cov_err, float(norm_err), mean_z, mnorm, mnorm_se, ref_norm)


def pinsker_tv_bound(kl: float) -> float:
    """Total variation bound ``min(sqrt(kl / 2), 1)``."""
    if kl < 0:
        raise DivergenceError(f"KL must be nonnegative, got {kl}")
    return min(math.sqrt(kl / 2.0), 1.0)
