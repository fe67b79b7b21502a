"""Run configured experiments and persist samples, metrics and manifests."""

from __future__ import annotations

import hashlib
import json
import math
import platform
import time
from dataclasses import dataclass, field
from importlib.metadata import version as package_version
from pathlib import Path

import numpy as np
import scipy
from scipy.stats import spearmanr

from .. import __version__, bounds, dist_zoo
from .._rng import derive_seed
from ..sampler import AnnealSchedule, DivergenceError, LangevinConfig, Leg, annealed_run
from ..score_models import FittedDAE, OracleScore, dae_loss, dsm_loss, fit_dae, perturbed_oracle
from ..transport import w2_exact, w2_sliced
from .config import FIT_SCHEMA, ArmConfig, ConfigError, ExperimentConfig, resolve_target, validate

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3


def dumps(obj) -> str:
    return json.dumps(obj, allow_nan=False, default=_json_default)


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def json_real(v):
    if v is None or math.isfinite(v):
        return v
    return "inf" if v > 0 else ("-inf" if v < 0 else "nan")


class MetricsWriter:
    """Append-only JSONL writer, flushed after every record."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._fh = open(self.path, "w")
        self._seen: set = set()

    def write(self, record: dict):
        key = (record["experiment"], record.get("arm"), record["seed"], record["iteration"])
        if key in self._seen:
            raise ValueError(f"duplicate metric record {key}")
        self._seen.add(key)
        self._fh.write(dumps(record) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    return {"dsmlangevin": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "jsonschema": package_version("jsonschema")}


def write_manifest(out_dir: Path, command: str, echo: dict, seeds, artifacts: list[str],
                   status: str = "ok", **extra) -> dict:
    manifest = {
        "schema": 1, "command": command, "status": status, "seeds": list(seeds),
        "config": echo, "versions": versions(),
        "artifacts": [{"path": a, "sha256": sha256_file(out_dir / a)} for a in artifacts],
        **extra,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        fh.write(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    return manifest


# --- model construction ----------------------------------------------------


def build_model(doc: dict, target, sigma_sq: float, seed: int, base_dir=Path(".")):
    """A score model from its config entry; randomness is derived from ``seed``."""
    kind = doc.get("kind", "oracle")
    if kind == "oracle":
        return OracleScore(target, sigma_sq)
    if kind == "perturbed":
        return perturbed_oracle(target, sigma_sq, doc["epsilon"], derive_seed(seed, "perturbation"),
                                n_modes=doc.get("n_modes", 20), freq_scale=doc.get("freq_scale", 1.0),
                                calibration_n=doc.get("calibration_n", 200_000))
    if kind == "fitted":
        return fit_dae(target, sigma_sq, doc["train_n"], doc["gamma"], doc["features"], doc["ridge"],
                       derive_seed(seed, "fit"), linear=doc.get("linear", False))
    if kind == "file":
        model = FittedDAE.load(Path(base_dir) / doc["path"])
        if model.dim != target.dim:
            raise ConfigError([("/model/path", f"model dim {model.dim} != target dim {target.dim}")])
        return model
    raise ConfigError([("/model/kind", f"unknown model kind {kind!r}")])


# --- single arm ------------------------------------------------------------


@dataclass
class ArmResult:
    name: str
    seed: int
    records: list[dict] = field(default_factory=list)
    final_points: np.ndarray | None = None
    final_w2: float = math.inf
    divergence: dict | None = None


def _w2(points: np.ndarray, reference: np.ndarray, cfg: ExperimentConfig, seed: int):
    ev = cfg.evaluation
    pts = points[: ev.eval_n]
    if ev.w2_method == "sliced":
        return w2_sliced(pts, reference, ev.projections, derive_seed(seed, "sliced"))
    return w2_exact(pts, reference)


def _leg_of(k: int, boundaries: list[int]) -> int:
    leg = 0
    for i, start in enumerate(boundaries):
        if k > start:
            leg = i
    return leg


def reference_sample(cfg: ExperimentConfig, seed: int) -> np.ndarray:
    return dist_zoo.sample(cfg.target, cfg.evaluation.eval_n, seed, "reference").points


def run_arm(cfg: ExperimentConfig, arm: ArmConfig, seed: int, chain_seed: int,
            reference: np.ndarray, bounds_ref: str | None = None) -> ArmResult:
    """Run every leg of one arm at one seed and evaluate W2 at each snapshot."""
    t0 = time.perf_counter()
    legs = [Leg(l.eta, l.sigma_sq, l.steps, build_model(l.model, cfg.target, l.sigma_sq, seed, cfg.base_dir))
            for l in arm.legs]
    schedule = AnnealSchedule(tuple(legs))
    base = LangevinConfig(eta=legs[0].eta, steps=schedule.total_steps, chains=cfg.chains,
                          init=cfg.init, seed=chain_seed)
    result = ArmResult(arm.name, seed)
    try:
        traj = annealed_run(schedule, base, cfg.evaluation.snapshot_every)
    except DivergenceError as exc:
        result.divergence = {"leg": exc.leg, "iteration": exc.iteration, "norm": json_real(exc.norm)}
        return result
    for k, batch in traj.snapshots:
        est = _w2(batch.points, reference, cfg, seed)
        result.records.append({
            "schema": 1, "experiment": cfg.experiment, "arm": arm.name, "seed": seed,
            "leg": _leg_of(k, traj.leg_boundaries), "iteration": k,
            "wall_time": time.perf_counter() - t0 if cfg.record_timing else None,
            "w2": est.to_dict(), "moment": float(traj.moment_mean[k]),
            "moment_se": float(traj.moment_se[k]), "bounds_ref": bounds_ref,
        })
    result.final_points = traj.final.points
    result.final_w2 = result.records[-1]["w2"]["value"]
    return result


def _write_bounds(cfg: ExperimentConfig, out_dir: Path) -> str | None:
    if cfg.bounds is None:
        return None
    report = bounds.thm1_bound(bounds.BoundInputs.from_dict(cfg.bounds))
    with open(out_dir / "bounds.json", "w") as fh:
        fh.write(dumps(report.to_dict()) + "\n")
    return "bounds.json"


# --- commands --------------------------------------------------------------


def run_sample(cfg: ExperimentConfig, out_dir: Path) -> tuple[int, dict]:
    out_dir.mkdir(parents=True, exist_ok=True)
    bref = _write_bounds(cfg, out_dir)
    artifacts = [bref] if bref else []
    arm = cfg.arms[0]
    divergences = []
    with MetricsWriter(out_dir / "metrics.jsonl") as mw:
        for seed in cfg.seeds:
            res = run_arm(cfg, arm, seed, seed, reference_sample(cfg, seed), bref)
            for rec in res.records:
                mw.write(rec)
            if res.divergence is not None:
                divergences.append({"seed": seed, **res.divergence})
                break
            name = f"samples_seed{seed}.csv"
            dist_zoo.write_batch_csv(res.final_points, out_dir / name)
            artifacts.append(name)
    artifacts.append("metrics.jsonl")
    status = "diverged" if divergences else "ok"
    manifest = write_manifest(out_dir, "sample", cfg.echo, cfg.seeds, artifacts, status,
                              divergences=divergences)
    return (EXIT_DIVERGED if divergences else EXIT_OK), manifest


def arm_seed(seed: int, arm_name: str) -> int:
    return derive_seed(seed, "arm", arm_name)


def tally(finals: dict[str, list[float]]) -> dict[str, float]:
    """Per seed the arm(s) with the smallest final W2 share one win."""
    names = list(finals)
    wins = {n: 0.0 for n in names}
    for vals in zip(*(finals[n] for n in names)):
        best = min(vals)
        winners = [n for n, v in zip(names, vals) if v == best]
        for n in winners:
            wins[n] += 1.0 / len(winners)
    return wins


def run_compare(cfg: ExperimentConfig, out_dir: Path) -> tuple[int, dict]:
    out_dir.mkdir(parents=True, exist_ok=True)
    bref = _write_bounds(cfg, out_dir)
    finals = {a.name: [] for a in cfg.arms}
    traces = {a.name: {} for a in cfg.arms}
    divergences = []
    with MetricsWriter(out_dir / "metrics.jsonl") as mw:
        for seed in cfg.seeds:
            ref = reference_sample(cfg, seed)
            for arm in cfg.arms:
                res = run_arm(cfg, arm, seed, arm_seed(seed, arm.name), ref, bref)
                for rec in res.records:
                    mw.write(rec)
                    traces[arm.name].setdefault(rec["iteration"], []).append(rec["w2"]["value"])
                if res.divergence is not None:
                    divergences.append({"arm": arm.name, "seed": seed, **res.divergence})
                finals[arm.name].append(res.final_w2)

    arms_out = []
    for arm in cfg.arms:
        vals = finals[arm.name]
        its = sorted(traces[arm.name])
        arms_out.append({
            "name": arm.name, "attribute": arm.attribute, "total_steps": arm.total_steps,
            "final_w2": [json_real(v) for v in vals], "median_w2": json_real(float(np.median(vals))),
            "trace": {"iterations": its,
                      "median_w2": [float(np.median(traces[arm.name][k])) for k in its]},
        })
    report = {"schema": 1, "experiment": cfg.experiment, "seeds": list(cfg.seeds), "arms": arms_out,
              "tally": tally(finals),
              "equal_budget": len({a.total_steps for a in cfg.arms}) == 1}
    if all(a.attribute is not None for a in cfg.arms):
        xs = [a.attribute for a in cfg.arms for _ in cfg.seeds]
        ys = [v for a in cfg.arms for v in finals[a.name]]
        rho = spearmanr(xs, ys).statistic
        report["spearman"] = {"rho": None if math.isnan(rho) else float(rho), "n": len(xs)}
    with open(out_dir / "comparison.json", "w") as fh:
        fh.write(json.dumps(report, indent=2, allow_nan=False) + "\n")
    artifacts = ([bref] if bref else []) + ["metrics.jsonl", "comparison.json"]
    status = "diverged" if divergences else "ok"
    manifest = write_manifest(out_dir, "compare", cfg.echo, cfg.seeds, artifacts, status,
                              divergences=divergences)
    return (EXIT_DIVERGED if divergences else EXIT_OK), manifest


def run_fit(doc: dict, base_dir: Path, out_dir: Path) -> tuple[int, dict]:
    """Fit one DAE per seed, save each as model JSON and log its held-out losses."""
    validate(doc, FIT_SCHEMA)
    errors = []
    target = resolve_target(doc, Path(base_dir), errors)
    if errors:
        raise ConfigError(errors)
    out_dir.mkdir(parents=True, exist_ok=True)
    f, s2 = doc["fit"], doc["sigma_sq"]
    eval_n = doc.get("eval_n", 20000)
    artifacts = []
    with MetricsWriter(out_dir / "metrics.jsonl") as mw:
        for seed in doc["seeds"]:
            model = fit_dae(target, s2, f["train_n"], f["gamma"], f["features"], f["ridge"],
                            derive_seed(seed, "fit"), linear=f.get("linear", False))
            name = f"model_seed{seed}.json"
            model.save(out_dir / name)
            artifacts.append(name)
            eval_seed = derive_seed(seed, "fit-eval")
            mw.write({"schema": 1, "experiment": doc["experiment"], "arm": None, "seed": seed,
                      "iteration": 0, "model": name,
                      "dae_loss": dae_loss(model.denoiser, target, s2, eval_n, eval_seed).to_dict(),
                      "dsm_loss": dsm_loss(model, target, s2, eval_n, eval_seed).to_dict(),
                      "lipschitz_bound": model.lipschitz_bound})
    artifacts.append("metrics.jsonl")
    return EXIT_OK, write_manifest(out_dir, "fit", doc, doc["seeds"], artifacts)

