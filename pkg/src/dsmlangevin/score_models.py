"""Score estimators for smoothed targets, DAE/DSM losses, Rademacher averages.

A score model is any callable mapping an (n, d) array to an (n, d) array.
The classes here additionally carry ``kind``, ``sigma_sq``, ``dim`` and a
reported ``lipschitz_bound`` (the M/2 audited by the sampler).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from . import dist_zoo
from ._rng import make_rng
from .dist_zoo import DensitySpec

VectorField = Callable[[np.ndarray], np.ndarray]


class EstimatorError(ValueError):
    """A vector field returned non-finite values during loss estimation."""


class ScoreModel:
    kind: str = "abstract"
    sigma_sq: float
    dim: int
    lipschitz_bound: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def denoiser(self, x: np.ndarray) -> np.ndarray:
        """The DAE view r(x) = x + sigma^2 s(x)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x + self.sigma_sq * self(x)


@dataclass(frozen=True, eq=False)
class OracleScore(ScoreModel):
    """Exact score of ``spec`` smoothed by ``sigma_sq``."""

    spec: DensitySpec
    sigma_sq: float = 0.0
    kind: str = field(default="oracle", init=False)
    smoothed: DensitySpec = field(init=False, repr=False)
    lipschitz_bound: float = field(init=False)

    def __post_init__(self):
        sm = dist_zoo.smooth(self.spec, self.sigma_sq)
        object.__setattr__(self, "smoothed", sm)
        object.__setattr__(self, "lipschitz_bound", dist_zoo.score_lipschitz(sm))

    @property
    def dim(self) -> int:
        return self.spec.dim

    def __call__(self, x):
        return dist_zoo.score(self.smoothed, np.atleast_2d(np.asarray(x, dtype=float)))


@dataclass(frozen=True, eq=False)
class PerturbedOracle(ScoreModel):
    """Oracle plus a fixed smooth field ``scale * sum_j a_j sin(<w_j, x> + phi_j)``."""

    oracle: OracleScore
    epsilon: float
    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    scale: float
    seed: int
    kind: str = field(default="perturbed", init=False)

    @property
    def sigma_sq(self) -> float:
        return self.oracle.sigma_sq

    @property
    def dim(self) -> int:
        return self.oracle.dim

    @property
    def lipschitz_bound(self) -> float:
        field_lip = self.scale * float(np.sum(np.linalg.norm(self.amplitudes, axis=1)
                                              * np.linalg.norm(self.frequencies, axis=1)))
        return self.oracle.lipschitz_bound + field_lip

    def perturbation(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.scale == 0:
            return np.zeros_like(x)
        return self.scale * np.sin(x @ self.frequencies.T + self.phases) @ self.amplitudes

    def __call__(self, x):
        base = self.oracle(x)
        if self.scale == 0:
            return base
        return base + self.perturbation(x)


def perturbed_oracle(spec: DensitySpec, sigma_sq: float, epsilon: float, seed: int,
                     n_modes: int = 20, freq_scale: float = 1.0,
                     calibration_n: int = 200_000) -> PerturbedOracle:
    """Oracle whose L2(p_sigma^2) root-mean-square error is ``epsilon``.

    The field shape depends on ``seed`` only, so oracles built with the same
    seed and different ``epsilon`` differ by a scalar multiple of one field.
    """
    if not epsilon >= 0:
        raise ValueError("epsilon must be nonnegative")
    oracle = OracleScore(spec, sigma_sq)
    rng = make_rng(seed, "score_models.perturbation-field")
    amps = rng.standard_normal((n_modes, spec.dim))
    freqs = freq_scale * rng.standard_normal((n_modes, spec.dim))
    phases = rng.uniform(0.0, 2 * math.pi, n_modes)
    scale = 0.0
    if epsilon > 0:
        unit = PerturbedOracle(oracle, 1.0, amps, freqs, phases, 1.0, seed)
        calib = dist_zoo.sample(oracle.smoothed, calibration_n, seed, "perturbation-calibration")
        rms = math.sqrt(float(np.mean(np.sum(unit.perturbation(calib.points) ** 2, axis=1))))
        scale = epsilon / rms
    return PerturbedOracle(oracle, float(epsilon), amps, freqs, phases, scale, seed)


@dataclass(frozen=True, eq=False)
class FittedDAE(ScoreModel):
    """Feature-linear DAE ``r(x) = x + sigma^2 W phi(x)``; calling it gives s = W phi."""

    sigma_sq: float
    gamma: float
    frequencies: np.ndarray   # (F, d), scaled by gamma at evaluation
    phases: np.ndarray        # (F,)
    weights: np.ndarray       # (d, F) or (d, F + d) with the linear block last
    ridge: float
    linear: bool = False
    kind: str = field(default="fitted", init=False)

    def __post_init__(self):
        if not self.sigma_sq > 0:
            raise ValueError("a fitted DAE needs sigma_sq > 0")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.frequencies.shape[0]

    def features(self, x) -> np.ndarray:
        return rff_features(np.atleast_2d(np.asarray(x, dtype=float)), self.gamma,
                            self.frequencies, self.phases, self.linear)

    def __call__(self, x):
        return self.features(x) @ self.weights.T

    @property
    def lipschitz_bound(self) -> float:
        F = self.n_features
        lip = 0.0
        if F:
            w_rff = self.weights[:, :F]
            lip += (self.gamma * math.sqrt(2.0 / F) * np.linalg.norm(w_rff, 2)
                    * np.linalg.norm(self.frequencies, 2))
        if self.linear:
            lip += float(np.linalg.norm(self.weights[:, F:], 2))
        return float(lip)

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "kind": "fitted",
            "dim": self.dim,
            "gamma": self.gamma,
            "features": self.frequencies.tolist(),
            "phases": self.phases.tolist(),
            "weights": self.weights.tolist(),
            "ridge": self.ridge,
            "sigma_sq": self.sigma_sq,
            "linear": self.linear,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedDAE":
        d = int(doc.get("dim", len(doc["weights"])))
        freqs = np.array(doc["features"], dtype=float).reshape(-1, d)
        return cls(float(doc["sigma_sq"]), float(doc["gamma"]), freqs,
                   np.array(doc["phases"], dtype=float).reshape(-1),
                   np.array(doc["weights"], dtype=float).reshape(d, -1),
                   float(doc["ridge"]), bool(doc.get("linear", False)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "FittedDAE":
        return cls.from_dict(json.loads(Path(path).read_text()))


def rff_features(x: np.ndarray, gamma: float, frequencies: np.ndarray, phases: np.ndarray,
                 linear: bool = False) -> np.ndarray:
    F = frequencies.shape[0]
    parts = []
    if F:
        parts.append(math.sqrt(2.0 / F) * np.cos(gamma * (x @ frequencies.T) + phases))
    if linear:
        parts.append(x)
    if not parts:
        raise ValueError("feature map is empty: need n_features > 0 or linear=True")
    return np.hstack(parts)


def solve_dae_ridge(phi: np.ndarray, noisy: np.ndarray, clean: np.ndarray, sigma_sq: float,
                    ridge: float) -> np.ndarray:
    """argmin_W sum_i |noisy_i + sigma^2 W phi_i - clean_i|^2 + ridge |W|_F^2.

    Rewritten in score units the problem is ridge regression of
    (clean - noisy) / sigma^2 on phi with penalty ridge / sigma^4.
    """
    target = (clean - noisy) / sigma_sq
    gram = phi.T @ phi + (ridge / sigma_sq ** 2) * np.eye(phi.shape[1])
    try:
        cho = scipy.linalg.cho_factor(gram, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "normal equations are singular; use ridge > 0") from exc
    return scipy.linalg.cho_solve(cho, phi.T @ target).T


def _draw_features(seed: int, dim: int, n_features: int):
    rng = make_rng(seed, "score_models.rff")
    return rng.standard_normal((n_features, dim)), rng.uniform(0.0, 2 * math.pi, n_features)


def fit_dae(spec: DensitySpec, sigma_sq: float, train_n: int, gamma: float, n_features: int,
            ridge: float, seed: int, linear: bool = False) -> FittedDAE:
    """Closed-form empirical DAE over random Fourier features."""
    if not sigma_sq > 0:
        raise ValueError("fit_dae needs sigma_sq > 0")
    X = dist_zoo.sample(spec, train_n, seed, "dae-train").points
    xi = make_rng(seed, "score_models.dae-noise").standard_normal(X.shape)
    Y = X + math.sqrt(sigma_sq) * xi
    freqs, phases = _draw_features(seed, spec.dim, n_features)
    phi = rff_features(Y, gamma, freqs, phases, linear)
    W = solve_dae_ridge(phi, Y, X, sigma_sq, ridge)
    return FittedDAE(float(sigma_sq), float(gamma), freqs, phases, W, float(ridge), linear)


def fit_dsm_oracle(spec: DensitySpec, sigma_sq: float, train_n: int, gamma: float,
                   n_features: int, ridge: float, seed: int, linear: bool = False) -> FittedDAE:
    """Ridge regression of the exact smoothed score at X_i ~ p_sigma^2 (not a practical fit)."""
    sm = dist_zoo.smooth(spec, sigma_sq)
    X = dist_zoo.sample(sm, train_n, seed, "dsm-train").points
    target = dist_zoo.score(sm, X)
    freqs, phases = _draw_features(seed, spec.dim, n_features)
    phi = rff_features(X, gamma, freqs, phases, linear)
    gram = phi.T @ phi + ridge * np.eye(phi.shape[1])
    W = scipy.linalg.solve(gram, phi.T @ target, assume_a="pos").T
    return FittedDAE(float(sigma_sq), float(gamma), freqs, phases, W, float(ridge), linear)


# --- losses ----------------------------------------------------------------


@dataclass(frozen=True)
class LossEstimate:
    value: float
    std_error: float
    n: int

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n": self.n}


def _estimate(per_sample: np.ndarray) -> LossEstimate:
    if not np.all(np.isfinite(per_sample)):
        raise EstimatorError("vector field produced non-finite values")
    n = per_sample.size
    return LossEstimate(float(per_sample.mean()), float(per_sample.std(ddof=1) / math.sqrt(n)), n)


def _eval(f: VectorField, x: np.ndarray) -> np.ndarray:
    out = np.asarray(f(x), dtype=float)
    return out.reshape(x.shape)


def _noisy_pairs(spec: DensitySpec, sigma_sq: float, n: int, seed: int):
    X = dist_zoo.sample(spec, n, seed, "loss-clean").points
    eps = math.sqrt(sigma_sq) * make_rng(seed, "score_models.loss-noise").standard_normal(X.shape)
    return X, eps


def _dae_terms(r, X, eps):
    return np.sum((_eval(r, X + eps) - X) ** 2, axis=1)


def dae_loss(r: VectorField, spec: DensitySpec, sigma_sq: float, n: int, seed: int) -> LossEstimate:
    """Monte-Carlo E|r(X + e) - X|^2 with X ~ p, e ~ N(0, sigma_sq I)."""
    if n < 2 or not sigma_sq > 0:
        raise ValueError("dae_loss needs n >= 2 and sigma_sq > 0")
    X, eps = _noisy_pairs(spec, sigma_sq, n, seed)
    return _estimate(_dae_terms(r, X, eps))


def dsm_loss(s: VectorField, spec: DensitySpec, sigma_sq: float, n: int, seed: int) -> LossEstimate:
    """Monte-Carlo E|s(X) - grad log p_sigma^2(X)|^2 with X ~ p_sigma^2."""
    if n < 2:
        raise ValueError("dsm_loss needs n >= 2")
    sm = dist_zoo.smooth(spec, sigma_sq)
    X = dist_zoo.sample(sm, n, seed, "dsm-eval").points
    return _estimate(np.sum((_eval(s, X) - dist_zoo.score(sm, X)) ** 2, axis=1))


@dataclass(frozen=True)
class GapReport:
    gaps: tuple[float, ...]
    std_errors: tuple[float, ...]
    spread: float

    @property
    def max_std_error(self) -> float:
        return max(self.std_errors)


def equivalence_gap_report(r_list: Sequence[VectorField], spec: DensitySpec, sigma_sq: float,
                           n: int, seed: int) -> GapReport:
    """DAE loss minus sigma^4 times DSM loss, per handle, on one shared sample.

    With s = (r - id)/sigma^2 the two objectives differ by an r-free constant,
    so the gaps should agree across handles up to Monte-Carlo error.
    """
    if len(r_list) < 1:
        raise ValueError("need at least one handle")
    sm = dist_zoo.smooth(spec, sigma_sq)
    X, eps = _noisy_pairs(spec, sigma_sq, n, seed)
    Y = X + eps
    true_score = dist_zoo.score(sm, Y)
    gaps, ses = [], []
    for r in r_list:
        rY = _eval(r, Y)
        dae = np.sum((rY - X) ** 2, axis=1)
        s = (rY - Y) / sigma_sq
        dsm = np.sum((s - true_score) ** 2, axis=1)
        est = _estimate(dae - sigma_sq ** 2 * dsm)
        gaps.append(est.value)
        ses.append(est.std_error)
    return GapReport(tuple(gaps), tuple(ses), float(max(gaps) - min(gaps)))


def equivalence_gap(r_list: Sequence[VectorField], spec: DensitySpec, sigma_sq: float, n: int,
                    seed: int) -> float:
    return equivalence_gap_report(r_list, spec, sigma_sq, n, seed).spread


# --- Rademacher ------------------------------------------------------------


def rademacher_mc(function_values: np.ndarray, trials: int, seed: int) -> float:
    """Monte-Carlo E_eps max_k (1/n) sum_i eps_i g_k(X_i) for an (n, K) value matrix."""
    vals = np.asarray(function_values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    n = vals.shape[0]
    if trials < 1 or n < 1:
        raise ValueError("need trials >= 1 and at least one point")
    rng = make_rng(seed, "score_models.rademacher")
    total = 0.0
    chunk = max(1, 2_000_000 // max(n, 1))
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        signs = rng.integers(0, 2, size=(m, n)) * 2.0 - 1.0
        total += float(np.max(signs @ vals / n, axis=1).sum())
        done += m
    return total / trials
