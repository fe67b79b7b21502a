"""Gaussian-mixture targets with closed-form scores.

Everything downstream (smoothing, scores, Hessians, Gaussian W2) is exact for
this family, which is why it is the only family supported.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from ._rng import make_rng

SYM_TOL = 1e-12
DEFAULT_SIGMA_TILDE_MAX_SQ = 1.0
_GRID_CAP = 2_000_000
_CHUNK = 50_000


class NonDissipativeError(ValueError):
    """Raised when no positive dissipativity slope exists on the boundary shell."""


@dataclass(frozen=True, eq=False)
class DensitySpec:
    """Finite Gaussian mixture ``sum_i w_i N(mu_i, Sigma_i)`` on R^dim."""

    dim: int
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)
    _prec: np.ndarray = field(init=False, repr=False)
    _lognorm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = int(self.dim)
        if d < 1:
            raise ValueError("dim must be a positive integer")
        w = np.array(self.weights, dtype=float).reshape(-1)
        k = w.size
        mu = np.array(self.means, dtype=float).reshape(k, -1)
        cov = np.array(self.covariances, dtype=float).reshape(k, mu.shape[1], -1)
        if mu.shape != (k, d) or cov.shape != (k, d, d):
            raise ValueError(f"component shapes {mu.shape}, {cov.shape} disagree with dim={d}")
        if k == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > SYM_TOL:
            raise ValueError("weights must be nonnegative and sum to 1")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise ValueError("means and covariances must be finite")
        if np.max(np.abs(cov - np.swapaxes(cov, 1, 2))) > SYM_TOL:
            raise ValueError("covariances must be symmetric")
        if np.min(np.linalg.eigvalsh(cov)) <= 0:
            raise ValueError("covariances must be positive definite")
        chol = np.linalg.cholesky(cov)
        prec = np.linalg.inv(cov)
        prec = 0.5 * (prec + np.swapaxes(prec, 1, 2))
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        for name, arr in (("weights", w), ("means", mu), ("covariances", cov),
                          ("_chol", chol), ("_prec", prec)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "dim", d)
        lognorm = np.log(np.where(w > 0, w, 1.0)) - 0.5 * (d * math.log(2 * math.pi) + logdet)
        lognorm = np.where(w > 0, lognorm, -np.inf)
        lognorm.setflags(write=False)
        object.__setattr__(self, "_lognorm", lognorm)

    @property
    def n_components(self) -> int:
        return self.weights.size

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        m = self.mean()
        dev = self.means - m
        return np.einsum("k,kij->ij", self.weights, self.covariances) + np.einsum(
            "k,ki,kj->ij", self.weights, dev, dev)

    def __eq__(self, other):
        if not isinstance(other, DensitySpec):
            return NotImplemented
        return (self.dim == other.dim and np.array_equal(self.weights, other.weights)
                and np.array_equal(self.means, other.means)
                and np.array_equal(self.covariances, other.covariances))

    __hash__ = None


def gaussian(mean, cov) -> DensitySpec:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov * np.eye(mean.size)
    return DensitySpec(mean.size, [1.0], [mean], [cov])


def mixture(weights, means, covs) -> DensitySpec:
    means = [np.atleast_1d(np.asarray(m, dtype=float)) for m in means]
    d = means[0].size
    covs = [np.asarray(c, dtype=float) * (np.eye(d) if np.ndim(c) == 0 else 1.0) for c in covs]
    return DensitySpec(d, weights, means, covs)


def _as_points(spec: DensitySpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    pts = x.reshape(1, -1) if single else x
    if pts.ndim != 2 or pts.shape[1] != spec.dim:
        raise ValueError(f"expected points of dimension {spec.dim}, got shape {x.shape}")
    return pts, single


def _component_terms(spec: DensitySpec, pts: np.ndarray):
    """Per-component log weights+densities (n, K) and precision-weighted offsets (n, K, d)."""
    diff = spec.means[None, :, :] - pts[:, None, :]
    a = np.einsum("kij,nkj->nki", spec._prec, diff)
    quad = np.einsum("nki,nki->nk", diff, a)
    return spec._lognorm[None, :] - 0.5 * quad, a


def log_density(spec: DensitySpec, x):
    pts, single = _as_points(spec, x)
    logc, _ = _component_terms(spec, pts)
    out = logsumexp(logc, axis=1)
    return float(out[0]) if single else out


def responsibilities(spec: DensitySpec, x) -> np.ndarray:
    pts, _ = _as_points(spec, x)
    logc, _ = _component_terms(spec, pts)
    return np.exp(logc - logsumexp(logc, axis=1, keepdims=True))


def score(spec: DensitySpec, x):
    """Gradient of ``log p`` at ``x`` (a d-vector or an (n, d) array)."""
    pts, single = _as_points(spec, x)
    logc, a = _component_terms(spec, pts)
    r = np.exp(logc - logsumexp(logc, axis=1, keepdims=True))
    s = np.einsum("nk,nki->ni", r, a)
    return s[0] if single else s


def hessian(spec: DensitySpec, x):
    """Hessian of ``log p``: sum_i r_i (a_i a_i^T - P_i) - s s^T with a_i = P_i (mu_i - x)."""
    pts, single = _as_points(spec, x)
    logc, a = _component_terms(spec, pts)
    r = np.exp(logc - logsumexp(logc, axis=1, keepdims=True))
    s = np.einsum("nk,nki->ni", r, a)
    h = (np.einsum("nk,nki,nkj->nij", r, a, a) - np.einsum("nk,kij->nij", r, spec._prec)
         - np.einsum("ni,nj->nij", s, s))
    return h[0] if single else h


def smooth(spec: DensitySpec, sigma_sq: float) -> DensitySpec:
    """Convolution with N(0, sigma_sq I): each covariance gains sigma_sq I."""
    sigma_sq = float(sigma_sq)
    if not sigma_sq >= 0:
        raise ValueError(f"sigma_sq must be nonnegative, got {sigma_sq}")
    if sigma_sq == 0:
        return spec
    return DensitySpec(spec.dim, spec.weights, spec.means,
                       spec.covariances + sigma_sq * np.eye(spec.dim))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """An (n, d) point cloud plus the seed and stream tag that produced it."""

    points: np.ndarray
    seed: int | None = None
    tag: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError("points must be an (n, d) array")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n


def sample(spec: DensitySpec, n: int, seed: int, tag: str = "sample") -> SampleBatch:
    if int(n) < 1:
        raise ValueError("n must be at least 1")
    n = int(n)
    rng = make_rng(seed, "dist_zoo.sample", tag)
    comp = rng.choice(spec.n_components, size=n, p=spec.weights)
    z = rng.standard_normal((n, spec.dim))
    pts = spec.means[comp] + np.einsum("nij,nj->ni", spec._chol[comp], z)
    return SampleBatch(pts, seed=seed, tag=tag)


# --- regularity constants -------------------------------------------------


@dataclass(frozen=True)
class RegularityConstants:
    """Constants of the regularity assumptions.

    ``lipschitz_M`` is M where the score is M/2-Lipschitz; ``dissip_m``,
    ``dissip_b`` the dissipativity pair; ``growth_B`` the offset in
    ``|score(x)| <= M|x| + B``; ``tail_C`` the prefactor in
    ``P(|X| > R) <= tail_C exp(-m R^2 / 4)``.
    """

    lipschitz_M: float
    dissip_m: float
    dissip_b: float
    growth_B: float
    sigma_max_sq: float
    tail_C: float = 1.0

    def __post_init__(self):
        vals = (self.lipschitz_M, self.dissip_m, self.dissip_b, self.growth_B,
                self.sigma_max_sq, self.tail_C)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("regularity constants must be finite")
        if self.lipschitz_M < 0 or self.dissip_b < 0 or self.growth_B < 0 or self.sigma_max_sq < 0:
            raise ValueError("M, b, B and sigma_max_sq must be nonnegative")
        if self.dissip_m <= 0:
            raise ValueError("dissipativity slope m must be positive")
        if self.lipschitz_M > 0 and self.sigma_max_sq > self.dissip_m / (2 * self.lipschitz_M) * (1 + 1e-12):
            raise ValueError("sigma_max_sq exceeds m / (2M)")

    def to_dict(self) -> dict:
        return {"M": self.lipschitz_M, "m": self.dissip_m, "b": self.dissip_b,
                "B": self.growth_B, "sigma_max_sq": self.sigma_max_sq, "tail_C": self.tail_C}

    @classmethod
    def from_dict(cls, d: dict) -> "RegularityConstants":
        M, m = float(d["M"]), float(d["m"])
        sms = d.get("sigma_max_sq")
        if sms is None:
            sms = min(m / (2 * M), DEFAULT_SIGMA_TILDE_MAX_SQ) if M > 0 else DEFAULT_SIGMA_TILDE_MAX_SQ
        return cls(M, m, float(d.get("b", 0.0)), float(d.get("B", 0.0)), float(sms),
                   float(d.get("tail_C", 1.0)))


def box_tail_bound(spec: DensitySpec, radius: float) -> float:
    """Union bound on the mass outside the cube [-radius, radius]^d."""
    sd = np.sqrt(np.diagonal(spec.covariances, axis1=1, axis2=2))
    hi = stats.norm.sf((radius - spec.means) / sd)
    lo = stats.norm.cdf((-radius - spec.means) / sd)
    return float(spec.weights @ (hi + lo).sum(axis=1))


def covering_radius(spec: DensitySpec, mass: float = 1e-7) -> float:
    """Smallest cube half-width (to 1e-6) whose complement carries at most ``mass``."""
    sd = float(np.sqrt(np.max(np.diagonal(spec.covariances, axis1=1, axis2=2))))
    hi = float(np.max(np.abs(spec.means))) + 40.0 * sd
    return float(optimize.brentq(lambda r: box_tail_bound(spec, r) - mass, 1e-9, hi, xtol=1e-6)) + 1e-6


def norm_tail_bound(spec: DensitySpec, r) -> np.ndarray:
    """Upper bound on P(|X| > r) via |X| <= |mu_i| + |Sigma_i^{1/2} Z| per component."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    lam = np.linalg.eigvalsh(spec.covariances)[:, -1]
    mnorm = np.linalg.norm(spec.means, axis=1)
    excess = np.clip(r[:, None] - mnorm[None, :], 0.0, None)
    tail = stats.chi2.sf(excess ** 2 / lam[None, :], spec.dim)
    return np.minimum(1.0, tail @ spec.weights)


def _grid(spec: DensitySpec, radius: float, grid_points: int):
    d = spec.dim
    if grid_points ** d <= _GRID_CAP:
        axis = np.linspace(-radius, radius, grid_points)
        pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        shell = np.isclose(np.max(np.abs(pts), axis=1), radius)
        return pts, shell
    # too many tensor points: radial lines through fixed directions
    rng = make_rng(0, "dist_zoo.grid_directions", d)
    dirs = rng.standard_normal((256, d))
    dirs = np.vstack([np.eye(d), -np.eye(d), dirs / np.linalg.norm(dirs, axis=1, keepdims=True)])
    radii = np.linspace(0.0, radius, grid_points)
    pts = (radii[None, :, None] * dirs[:, None, :]).reshape(-1, d)
    shell = np.isclose(np.linalg.norm(pts, axis=1), radius)
    return pts, shell


def estimate_constants(spec: DensitySpec, radius: float, grid_points: int,
                       sigma_tilde_max_sq: float = DEFAULT_SIGMA_TILDE_MAX_SQ) -> RegularityConstants:
    """Grid estimates of (M, m, b, B) for ``spec``.

    M/2 is the largest Hessian spectral norm on the grid.  m is half the
    smallest ratio <-score(x), x>/|x|^2 over the boundary shell of the grid,
    b the smallest offset making the dissipativity inequality hold on the
    whole grid with that m, and B the smallest offset in the growth bound.
    """
    if grid_points < 3:
        raise ValueError("grid too coarse: need at least 3 points per axis")
    if not radius > 0:
        raise ValueError("radius must be positive")
    outside = box_tail_bound(spec, radius)
    if outside > 1e-6:
        raise ValueError(f"radius {radius} leaves mass {outside:.3g} > 1e-6 outside the grid")

    pts, shell = _grid(spec, radius, grid_points)
    hnorm, inner, snorm, xsq = [], [], [], []
    for start in range(0, pts.shape[0], _CHUNK):
        p = pts[start:start + _CHUNK]
        s = score(spec, p)
        h = hessian(spec, p)
        hnorm.append(np.max(np.abs(np.linalg.eigvalsh(h)), axis=1))
        inner.append(-np.einsum("ni,ni->n", s, p))
        snorm.append(np.linalg.norm(s, axis=1))
        xsq.append(np.einsum("ni,ni->n", p, p))
    hnorm, inner, snorm, xsq = map(np.concatenate, (hnorm, inner, snorm, xsq))

    M = 2.0 * float(hnorm.max())
    ratio = inner[shell] / xsq[shell]
    if ratio.size == 0 or ratio.min() <= 0:
        raise NonDissipativeError("<-score(x), x> is not positive on the boundary shell")
    m = 0.5 * float(ratio.min())
    b = max(0.0, float(np.max(m * xsq - inner)))
    s0 = float(np.linalg.norm(score(spec, np.zeros(spec.dim))))
    B = max(s0, float(np.max(snorm - M * np.sqrt(xsq))))
    sigma_max_sq = min(m / (2 * M), float(sigma_tilde_max_sq)) if M > 0 else float(sigma_tilde_max_sq)

    r = np.linspace(0.0, 2.0 * radius, 4001)
    tail_C = float(max(1.0, np.max(norm_tail_bound(spec, r) * np.exp(m * r ** 2 / 4))))
    return RegularityConstants(M, m, b, B, sigma_max_sq, tail_C)


_DEFAULT_GRID = {1: 10001, 2: 401, 3: 81, 4: 25}


def default_constants(spec: DensitySpec,
                      sigma_tilde_max_sq: float = DEFAULT_SIGMA_TILDE_MAX_SQ) -> RegularityConstants:
    """``estimate_constants`` on a cube 20% wider than the 1e-7 covering radius."""
    radius = 1.2 * covering_radius(spec)
    return estimate_constants(spec, radius, _DEFAULT_GRID.get(spec.dim, 401), sigma_tilde_max_sq)


def score_lipschitz(spec: DensitySpec) -> float:
    """An upper bound (M/2) on the Lipschitz constant of the score.

    Exact for one component.  For shared covariances the Hessian is
    ``Cov_r(a) - P`` and Popoviciu's inequality bounds the first term by a
    quarter of the squared diameter of {P mu_i}.  Otherwise the Hessian norm
    is audited on a fixed sample of the density.
    """
    lam = np.linalg.eigvalsh(spec._prec)[:, -1]
    if spec.n_components == 1:
        return float(lam[0])
    if np.allclose(spec.covariances, spec.covariances[0], rtol=0, atol=1e-12):
        a = spec.means @ spec._prec[0]
        diam = max(np.linalg.norm(a[i] - a[j]) for i in range(len(a)) for j in range(len(a)))
        return float(lam.max() + diam ** 2 / 4)
    pts = np.vstack([sample(spec, 20_000, 0, "lipschitz-audit").points, spec.means])
    h = hessian(spec, pts)
    return float(np.max(np.abs(np.linalg.eigvalsh(h))))


def density_sup(spec: DensitySpec) -> float:
    """sup_x p(x), by local maximisation of log p from every component mean."""
    best = -np.inf
    for mu in spec.means:
        res = optimize.minimize(lambda x: -log_density(spec, x), mu,
                                jac=lambda x: -score(spec, x), method="BFGS",
                                options={"gtol": 1e-12})
        best = max(best, -res.fun, log_density(spec, mu))
    return float(math.exp(best))


def stein_identity_check(g: Callable, grad_g: Callable, n: int, seed: int, dim: int = 1) -> float:
    """|mean g(xi) xi - mean grad g(xi)| over n standard Gaussian draws."""
    xi = make_rng(seed, "dist_zoo.stein").standard_normal((int(n), dim))
    gv = np.asarray(g(xi), dtype=float).reshape(-1)
    grad = np.asarray(grad_g(xi), dtype=float).reshape(xi.shape)
    lhs = (gv[:, None] * xi).mean(axis=0)
    return float(np.linalg.norm(lhs - grad.mean(axis=0)))


# --- the zoo ---------------------------------------------------------------


def zoo() -> dict[str, DensitySpec]:
    """Named test densities used by the experiments and acceptance checks."""
    return {
        "gauss_1d": gaussian([0.0], 1.0),
        "gauss_wide_1d": gaussian([1.0], 4.0),
        "bimodal_1d": mixture([0.5, 0.5], [[-3.0], [3.0]], [1.0, 1.0]),
        "bimodal_far_1d": mixture([0.5, 0.5], [[-4.0], [4.0]], [1.0, 1.0]),
        "gauss_aniso_2d": gaussian([1.0, -1.0], [[2.0, 0.5], [0.5, 1.0]]),
        "trimodal_2d": mixture([0.4, 0.3, 0.3], [[0.0, 2.0], [-1.7, -1.0], [1.7, -1.0]],
                               [0.5, 0.5, [[0.8, 0.2], [0.2, 0.5]]]),
        "gauss_4d": gaussian(np.zeros(4), 1.0),
    }


# --- serialisation ---------------------------------------------------------


def spec_to_dict(spec: DensitySpec) -> dict:
    return {
        "schema": 1,
        "dim": spec.dim,
        "components": [
            {"weight": float(w), "mean": mu.tolist(), "cov": cov.tolist()}
            for w, mu, cov in zip(spec.weights, spec.means, spec.covariances)
        ],
    }


def spec_from_dict(doc: dict) -> DensitySpec:
    comps = doc["components"]
    return DensitySpec(int(doc["dim"]), [c["weight"] for c in comps], [c["mean"] for c in comps],
                       [c["cov"] for c in comps])


def save_spec(spec: DensitySpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2, sort_keys=True) + "\n")


def load_spec(path) -> DensitySpec:
    return spec_from_dict(json.loads(Path(path).read_text()))


def batch_to_csv(batch: SampleBatch | np.ndarray) -> str:
    pts = batch.points if isinstance(batch, SampleBatch) else np.atleast_2d(batch)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j}" for j in range(pts.shape[1])])
    for row in pts:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def write_batch_csv(batch, path) -> None:
    Path(path).write_text(batch_to_csv(batch))


def read_batch_csv(path) -> SampleBatch:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header != [f"x{j}" for j in range(len(header))]:
        raise ValueError(f"{path}: header must be x0,...,x{{d-1}}")
    pts = np.array([[float(v) for v in row] for row in body], dtype=float).reshape(-1, len(header))
    return SampleBatch(pts, seed=None, tag=str(path))
