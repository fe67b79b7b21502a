"""Wasserstein-2 distances: exact assignment, Gaussian closed form, sliced."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.stats import norm

from . import dist_zoo
from ._rng import make_rng
from .dist_zoo import DensitySpec, SampleBatch

EXACT_CAP = 4096


class BatchTooLargeError(ValueError):
    """Exact assignment is capped; use ``w2_sliced`` for larger batches."""


@dataclass(frozen=True)
class W2Estimate:
    value: float
    method: str
    n_used: int
    std_error: float | None = None

    def to_dict(self) -> dict:
        return {"value": self.value, "method": self.method, "n": self.n_used,
                "std_error": self.std_error}


def _points(x) -> np.ndarray:
    pts = x.points if isinstance(x, SampleBatch) else np.asarray(x, dtype=float)
    return pts[:, None] if pts.ndim == 1 else pts


def _sorted_mean_sq(u: np.ndarray, v: np.ndarray) -> float:
    diff = np.sort(u) - np.sort(v)
    return math.fsum((diff * diff).tolist()) / diff.size


def w2_exact(a, b) -> W2Estimate:
    """Optimal-assignment W2 between two equal-size uniform point clouds.

    In one dimension the monotone (sorted) matching is the optimal
    assignment, so it is used directly; otherwise the full n x n linear
    assignment problem is solved.
    """
    A, B = _points(a), _points(b)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch {A.shape[1]} vs {B.shape[1]}")
    n = A.shape[0]
    if B.shape[0] != n:
        raise ValueError(f"exact assignment needs equal batch sizes, got {n} and {B.shape[0]}")
    if n > EXACT_CAP:
        raise BatchTooLargeError(f"n={n} exceeds the exact cap {EXACT_CAP}; use w2_sliced")
    if A.shape[1] == 1:
        return W2Estimate(math.sqrt(_sorted_mean_sq(A[:, 0], B[:, 0])), "exact-assignment", n)
    cost = cdist(A, B, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    total = math.fsum(cost[rows, cols].tolist())
    return W2Estimate(math.sqrt(max(total, 0.0) / n), "exact-assignment", n)


def _psd_sqrt(S: np.ndarray, name: str) -> np.ndarray:
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    tol = 1e-10 * max(1.0, float(np.max(np.abs(vals))))
    if vals.min() < -tol:
        raise ValueError(f"{name} is not positive semi-definite (min eigenvalue {vals.min():.3g})")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def w2_gaussian(mu1, S1, mu2, S2) -> W2Estimate:
    """Closed-form W2 between N(mu1, S1) and N(mu2, S2)."""
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, float)), np.atleast_1d(np.asarray(mu2, float))
    S1, S2 = np.atleast_2d(np.asarray(S1, float)), np.atleast_2d(np.asarray(S2, float))
    _psd_sqrt(S1, "S1")
    r2 = _psd_sqrt(S2, "S2")
    cross = _psd_sqrt(r2 @ S1 @ r2, "S2^1/2 S1 S2^1/2")
    sq = float(np.sum((mu1 - mu2) ** 2) + np.trace(S1) + np.trace(S2) - 2 * np.trace(cross))
    return W2Estimate(math.sqrt(max(sq, 0.0)), "gaussian-closed-form", 0)


def w2_sliced(a, b, projections: int, seed: int) -> W2Estimate:
    """Root of the mean squared 1-D W2 over random unit directions.

    A surrogate for large batches; it never exceeds the full W2 in
    expectation.  In one dimension every direction is +-1, so the value is
    the exact sorted-matching W2.
    """
    A, B = _points(a), _points(b)
    if A.shape != B.shape:
        raise ValueError(f"sliced estimator needs equal shapes, got {A.shape} and {B.shape}")
    if projections < 1:
        raise ValueError("projections must be >= 1")
    n, d = A.shape
    if d == 1:
        return W2Estimate(math.sqrt(_sorted_mean_sq(A[:, 0], B[:, 0])), "sliced", n, 0.0)
    dirs = make_rng(seed, "transport.sliced").standard_normal((projections, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(A @ dirs.T, axis=0)
    pb = np.sort(B @ dirs.T, axis=0)
    per_dir = np.mean((pa - pb) ** 2, axis=0)
    mean_sq = float(per_dir.mean())
    value = math.sqrt(mean_sq)
    se_sq = float(per_dir.std(ddof=1) / math.sqrt(projections)) if projections > 1 else 0.0
    se = se_sq / (2 * value) if value > 0 else 0.0
    return W2Estimate(value, "sliced", n, se)


def w2_bootstrap_se(a, b, reps: int, seed: int, paired: bool = True) -> float:
    """Bootstrap standard error of ``w2_exact(a, b)``.

    ``paired`` resamples the row indices jointly, which keeps a coupling
    between ``a[i]`` and ``b[i]`` intact.
    """
    A, B = _points(a), _points(b)
    n = A.shape[0]
    rng = make_rng(seed, "transport.bootstrap")
    vals = []
    for _ in range(reps):
        ia = rng.integers(0, n, n)
        ib = ia if paired else rng.integers(0, n, n)
        vals.append(w2_exact(A[ia], B[ib]).value)
    return float(np.std(vals, ddof=1))


def gaussian_quantile_batch(mean: float, var: float, n: int) -> np.ndarray:
    """n-point quantile discretisation of a 1-D Gaussian (mid-point levels)."""
    levels = (np.arange(n) + 0.5) / n
    return (mean + math.sqrt(var) * norm.ppf(levels))[:, None]


def smoothing_gap_check(spec: DensitySpec, sigma_sq: float, n: int, seed: int,
                        coupled: bool = True) -> tuple[float, float]:
    """(plug-in W2 between p and p_sigma^2 samples, the bound sigma sqrt(d)).

    Coupled sampling pairs X_i with X_i + sigma xi_i; otherwise the two
    batches are drawn independently.
    """
    X, Y = smoothing_gap_batches(spec, sigma_sq, n, seed, coupled)
    return w2_exact(X, Y).value, math.sqrt(sigma_sq * spec.dim)


def smoothing_gap_batches(spec: DensitySpec, sigma_sq: float, n: int, seed: int,
                          coupled: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """The two batches ``smoothing_gap_check`` compares (for bootstrap bands)."""
    if not sigma_sq >= 0:
        raise ValueError("sigma_sq must be nonnegative")
    X = dist_zoo.sample(spec, n, seed, "smoothing-gap-p").points
    if coupled:
        xi = make_rng(seed, "transport.smoothing-noise").standard_normal(X.shape)
        return X, X + math.sqrt(sigma_sq) * xi
    return X, dist_zoo.sample(dist_zoo.smooth(spec, sigma_sq), n, seed, "smoothing-gap-q").points
