"""Discrete Langevin iteration and the annealed schedule with warm restarts.

The update is ``W <- W + eta f(W) + sqrt(2 eta) xi``.  Noise for global
iteration k comes from the stream ``(seed, "ula-noise", k)`` and row c of that
draw belongs to chain c, so a run split into legs reproduces the unsplit run
bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ._rng import make_rng
from .dist_zoo import RegularityConstants, SampleBatch, write_batch_csv

DIVERGENCE_NORM = 1e6
DEFAULT_INIT_VAR = 0.01


class DivergenceError(RuntimeError):
    def __init__(self, leg: int, iteration: int, norm: float):
        self.leg, self.iteration, self.norm = leg, iteration, norm
        super().__init__(f"chain norm {norm:.3g} exceeded {DIVERGENCE_NORM:g} "
                         f"in leg {leg} at iteration {iteration}")


class StabilityError(ValueError):
    """eta * lipschitz_bound >= 1: the run is refused before it starts."""


@dataclass(frozen=True, eq=False)
class InitSpec:
    """Initial law: a point mass, an isotropic Gaussian, or a given batch."""

    kind: str
    mean: np.ndarray | None = None
    var: float = 0.0
    batch: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("point", "gaussian", "batch"):
            raise ValueError(f"unknown init kind {self.kind!r}")
        if self.kind == "batch":
            b = np.array(self.batch, dtype=float)
            b = b[:, None] if b.ndim == 1 else b
            object.__setattr__(self, "batch", b)
        else:
            object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
            if self.var < 0:
                raise ValueError("init variance must be nonnegative")

    @property
    def dim(self) -> int:
        return self.batch.shape[1] if self.kind == "batch" else self.mean.size

    def draw(self, chains: int, seed: int) -> np.ndarray:
        if self.kind == "batch":
            if self.batch.shape[0] != chains:
                raise ValueError(f"warm-start batch has {self.batch.shape[0]} rows, expected {chains}")
            return self.batch.copy()
        x = np.tile(self.mean, (chains, 1))
        if self.kind == "gaussian" and self.var > 0:
            x = x + math.sqrt(self.var) * make_rng(seed, "sampler.init").standard_normal(x.shape)
        return x

    def second_moment(self) -> float:
        if self.kind == "batch":
            return float(np.mean(np.sum(self.batch ** 2, axis=1)))
        return float(self.mean @ self.mean + self.dim * (self.var if self.kind == "gaussian" else 0.0))

    def to_dict(self) -> dict:
        if self.kind == "batch":
            return {"kind": "batch", "n": int(self.batch.shape[0])}
        return {"kind": self.kind, "mean": self.mean.tolist(), "var": self.var}


def point_init(x0) -> InitSpec:
    return InitSpec("point", mean=x0)


def gaussian_init(dim: int, var: float = DEFAULT_INIT_VAR, mean=None) -> InitSpec:
    return InitSpec("gaussian", mean=np.zeros(dim) if mean is None else mean, var=var)


def batch_init(points) -> InitSpec:
    return InitSpec("batch", batch=points)


@dataclass(frozen=True)
class LangevinConfig:
    eta: float
    steps: int
    chains: int
    init: InitSpec
    seed: int = 0

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValueError("eta must be positive")
        if self.steps < 0 or self.chains < 1:
            raise ValueError("need steps >= 0 and chains >= 1")

    @property
    def tau(self) -> float:
        return self.eta * self.steps

    def to_dict(self) -> dict:
        return {"eta": self.eta, "steps": self.steps, "chains": self.chains,
                "init": self.init.to_dict(), "seed": self.seed}


@dataclass(frozen=True)
class Leg:
    eta: float
    sigma_sq: float
    steps: int
    model: Callable


@dataclass(frozen=True)
class AnnealSchedule:
    legs: tuple[Leg, ...]

    def __post_init__(self):
        legs = tuple(self.legs)
        object.__setattr__(self, "legs", legs)
        if not legs:
            raise ValueError("schedule needs at least one leg")
        for a, b in zip(legs, legs[1:]):
            if b.eta > a.eta or b.sigma_sq > a.sigma_sq:
                raise ValueError("eta and sigma_sq must be non-increasing across legs")
        for i, leg in enumerate(legs):
            ms = getattr(leg.model, "sigma_sq", None)
            if ms is not None and not math.isclose(ms, leg.sigma_sq, rel_tol=0, abs_tol=1e-15):
                raise ValueError(f"leg {i}: model targets sigma_sq={ms}, leg says {leg.sigma_sq}")

    @property
    def strictly_decreasing_eta(self) -> bool:
        return all(b.eta < a.eta for a, b in zip(self.legs, self.legs[1:]))

    @property
    def strictly_decreasing_sigma(self) -> bool:
        return all(b.sigma_sq < a.sigma_sq for a, b in zip(self.legs, self.legs[1:]))

    @property
    def total_steps(self) -> int:
        return sum(leg.steps for leg in self.legs)


@dataclass
class Trajectory:
    snapshots: list[tuple[int, SampleBatch]]
    config: dict
    moment_mean: np.ndarray          # E|W_k|^2 over chains, k = 0..K
    moment_se: np.ndarray
    leg_boundaries: list[int] = field(default_factory=lambda: [0])

    @property
    def final(self) -> SampleBatch:
        return self.snapshots[-1][1]

    @property
    def iterations(self) -> int:
        return self.moment_mean.size - 1

    def snapshot_at(self, iteration: int) -> SampleBatch:
        for k, batch in self.snapshots:
            if k == iteration:
                return batch
        raise KeyError(iteration)


def _check_stability(model, eta: float):
    lip = getattr(model, "lipschitz_bound", None)
    if lip is not None and eta * lip >= 1:
        raise StabilityError(f"eta * lipschitz_bound = {eta * lip:.4g} >= 1 (eta={eta}, M/2={lip:.4g})")


def _run(model, eta, steps, chains, x, seed, start, leg, snapshot_every, observer):
    d = x.shape[1]
    sq = np.sum(x * x, axis=1)
    means = [float(sq.mean())]
    ses = [float(sq.std(ddof=1) / math.sqrt(chains)) if chains > 1 else 0.0]
    snaps = [(start, x.copy())]
    root = math.sqrt(2.0 * eta)
    for j in range(steps):
        k = start + j
        drift = np.asarray(model(x), dtype=float).reshape(x.shape)
        if observer is not None:
            observer(k, x, drift)
        noise = make_rng(seed, "ula-noise", k).standard_normal((chains, d))
        x = x + eta * drift + root * noise
        sq = np.sum(x * x, axis=1)
        worst = float(np.max(sq))
        if not math.isfinite(worst) or worst > DIVERGENCE_NORM ** 2:
            raise DivergenceError(leg, k + 1, math.sqrt(worst) if math.isfinite(worst) else worst)
        means.append(float(sq.mean()))
        ses.append(float(sq.std(ddof=1) / math.sqrt(chains)) if chains > 1 else 0.0)
        if snapshot_every and (k + 1) % snapshot_every == 0 and j + 1 < steps:
            snaps.append((k + 1, x.copy()))
    if steps:
        snaps.append((start + steps, x.copy()))
    return x, snaps, means, ses


def ula_run(model, config: LangevinConfig, snapshot_every: int | None = None, *,
            observer: Callable | None = None) -> Trajectory:
    """Unadjusted Langevin chains driven by ``model``.

    ``observer(k, state, drift)`` is called before each update if given.
    """
    _check_stability(model, config.eta)
    x0 = config.init.draw(config.chains, config.seed)
    _, snaps, means, ses = _run(model, config.eta, config.steps, config.chains, x0, config.seed,
                                0, 0, snapshot_every, observer)
    return Trajectory(
        snapshots=[(k, SampleBatch(p, seed=config.seed, tag=f"ula:{k}")) for k, p in snaps],
        config=config.to_dict(), moment_mean=np.array(means), moment_se=np.array(ses))


def annealed_run(schedule: AnnealSchedule, base_config: LangevinConfig,
                 snapshot_every: int | None = None) -> Trajectory:
    """Run the legs in order, each warm-started from the previous leg's final batch.

    ``base_config`` supplies chains, init and seed; eta and steps come from
    the legs.  Divergence errors carry the leg index.
    """
    for leg in schedule.legs:
        _check_stability(leg.model, leg.eta)
    x = base_config.init.draw(base_config.chains, base_config.seed)
    start = 0
    snaps_all, means_all, ses_all, bounds = [], [], [], []
    for i, leg in enumerate(schedule.legs):
        bounds.append(start)
        x, snaps, means, ses = _run(leg.model, leg.eta, leg.steps, base_config.chains, x,
                                    base_config.seed, start, i, snapshot_every, None)
        if i == 0:
            snaps_all.extend(snaps)
            means_all.extend(means)
            ses_all.extend(ses)
        else:
            snaps_all.extend(snaps[1:])
            means_all.extend(means[1:])
            ses_all.extend(ses[1:])
        start += leg.steps
    config = base_config.to_dict()
    config["legs"] = [{"eta": l.eta, "sigma_sq": l.sigma_sq, "steps": l.steps,
                       "model": getattr(l.model, "kind", "callable")} for l in schedule.legs]
    return Trajectory(
        snapshots=[(k, SampleBatch(p, seed=base_config.seed, tag=f"anneal:{k}")) for k, p in snaps_all],
        config=config, moment_mean=np.array(means_all), moment_se=np.array(ses_all),
        leg_boundaries=bounds)


def dump_trajectory(traj: Trajectory, out_dir) -> list[str]:
    """Write each snapshot as CSV plus ``trajectory.json``; returns the file names."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for k, batch in traj.snapshots:
        name = f"snapshot_{k:07d}.csv"
        write_batch_csv(batch, out_dir / name)
        names.append(name)
    doc = {"schema": 1, "config": traj.config, "leg_boundaries": traj.leg_boundaries,
           "snapshots": [{"iteration": k, "file": n} for (k, _), n in zip(traj.snapshots, names)],
           "moment_mean": traj.moment_mean.tolist(), "moment_se": traj.moment_se.tolist()}
    with open(out_dir / "trajectory.json", "w") as fh:
        json.dump(doc, fh)
    return names + ["trajectory.json"]


def ou_exact_law(x0, t: float, init_var: float = 0.0):
    """Law at time t of dW = -W dt + sqrt(2) dB started from N(x0, init_var I)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    x0 = np.asarray(x0, dtype=float)
    decay = math.exp(-t)
    return x0 * decay, init_var * decay ** 2 + (1.0 - decay ** 2)


def ula_gaussian_law(x0, eta: float, k: int, init_var: float = 0.0):
    """Exact law of k ULA steps on the N(0, I) oracle: a linear Gaussian recursion."""
    x0 = np.asarray(x0, dtype=float)
    a = 1.0 - eta
    var = init_var * a ** (2 * k) + 2 * eta * (1 - a ** (2 * k)) / (1 - a * a)
    return x0 * a ** k, var


def moment_trace_check(traj: Trajectory, constants: RegularityConstants,
                       bound: float | None = None) -> float:
    """max_k (E|W_k|^2 - bound - 3 se_k)^+ with bound = E|W_0|^2 + (b + d)/m."""
    d = traj.final.dim
    if bound is None:
        bound = traj.moment_mean[0] + (constants.dissip_b + d) / constants.dissip_m
    excess = traj.moment_mean - bound - 3.0 * traj.moment_se
    return float(max(0.0, np.max(excess)))
