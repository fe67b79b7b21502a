"""Experiment configuration: JSON schema validation and typed configs.

Errors are collected as ``(json_pointer, message)`` pairs so the CLI can
report every violation at once.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .. import dist_zoo
from ..dist_zoo import DensitySpec
from ..sampler import DEFAULT_INIT_VAR, InitSpec, gaussian_init, point_init
from ..transport import EXACT_CAP

_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}

_MODEL = {
    "oneOf": [
        {"const": "oracle"},
        {"type": "object", "required": ["kind"], "additionalProperties": False,
         "properties": {"kind": {"const": "oracle"}}},
        {"type": "object", "required": ["kind", "epsilon"], "additionalProperties": False,
         "properties": {"kind": {"const": "perturbed"}, "epsilon": _NONNEG,
                        "n_modes": {"type": "integer", "minimum": 1}, "freq_scale": _POS,
                        "calibration_n": {"type": "integer", "minimum": 1000}}},
        {"type": "object", "required": ["kind", "train_n", "gamma", "features", "ridge"],
         "additionalProperties": False,
         "properties": {"kind": {"const": "fitted"}, "train_n": {"type": "integer", "minimum": 1},
                        "gamma": _POS, "features": {"type": "integer", "minimum": 1},
                        "ridge": _NONNEG, "linear": {"type": "boolean"}}},
        {"type": "object", "required": ["kind", "path"], "additionalProperties": False,
         "properties": {"kind": {"const": "file"}, "path": {"type": "string"}}},
    ]
}

_LEG = {
    "type": "object", "required": ["eta", "sigma_sq", "steps"], "additionalProperties": False,
    "properties": {"eta": _POS, "sigma_sq": _NONNEG, "steps": {"type": "integer", "minimum": 0},
                   "model": _MODEL},
}

_SAMPLER = {
    "type": "object", "required": ["eta", "steps"], "additionalProperties": False,
    "properties": {"eta": _POS, "steps": {"type": "integer", "minimum": 0}, "sigma_sq": _NONNEG},
}

_RUN = {
    "model": _MODEL,
    "sigma_sq": _NONNEG,
    "sampler": _SAMPLER,
    "schedule": {"type": "object", "required": ["legs"], "additionalProperties": False,
                 "properties": {"legs": {"type": "array", "minItems": 1, "items": _LEG}}},
}

_TARGET = {
    "oneOf": [
        {"type": "object", "required": ["zoo"], "additionalProperties": False,
         "properties": {"zoo": {"type": "string"}}},
        {"type": "object", "required": ["file"], "additionalProperties": False,
         "properties": {"file": {"type": "string"}}},
        {"type": "object", "required": ["inline"], "additionalProperties": False,
         "properties": {"inline": {"type": "object"}}},
    ]
}

_INIT = {
    "type": "object", "required": ["kind"], "additionalProperties": False,
    "properties": {"kind": {"enum": ["point", "gaussian"]},
                   "mean": {"type": "array", "items": {"type": "number"}},
                   "var": _NONNEG},
}

_EVAL = {
    "type": "object", "additionalProperties": False,
    "properties": {"w2_method": {"enum": ["exact", "sliced"]},
                   "eval_n": {"type": "integer", "minimum": 2},
                   "snapshot_every": {"type": "integer", "minimum": 1},
                   "projections": {"type": "integer", "minimum": 1}},
}

_COMMON = {
    "schema": {"const": 1},
    "experiment": {"type": "string", "minLength": 1},
    "target": _TARGET,
    "chains": {"type": "integer", "minimum": 1},
    "init": _INIT,
    "evaluation": _EVAL,
    "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
    "output_dir": {"type": "string"},
    "record_timing": {"type": "boolean"},
    "bounds": {"type": "object"},
}

SAMPLE_SCHEMA = {
    "type": "object", "additionalProperties": False,
    "required": ["schema", "experiment", "target", "chains", "seeds"],
    "properties": {**_COMMON, **_RUN},
    "oneOf": [{"required": ["sampler"]}, {"required": ["schedule"]}],
}

_ARM = {
    "type": "object", "required": ["name"], "additionalProperties": False,
    "properties": {"name": {"type": "string", "minLength": 1}, "attribute": {"type": "number"},
                   **_RUN},
    "oneOf": [{"required": ["sampler"]}, {"required": ["schedule"]}],
}

COMPARE_SCHEMA = {
    "type": "object", "additionalProperties": False,
    "required": ["schema", "experiment", "target", "chains", "seeds", "arms"],
    "properties": {**_COMMON, "model": _MODEL,
                   "arms": {"type": "array", "minItems": 2, "items": _ARM}},
}

FIT_SCHEMA = {
    "type": "object", "additionalProperties": False,
    "required": ["schema", "experiment", "target", "sigma_sq", "fit", "seeds"],
    "properties": {
        "schema": {"const": 1}, "experiment": {"type": "string", "minLength": 1},
        "target": _TARGET, "sigma_sq": _POS,
        "seeds": _COMMON["seeds"], "output_dir": {"type": "string"},
        "eval_n": {"type": "integer", "minimum": 2},
        "fit": {"type": "object", "required": ["train_n", "gamma", "features", "ridge"],
                "additionalProperties": False,
                "properties": {"train_n": {"type": "integer", "minimum": 1}, "gamma": _POS,
                               "features": {"type": "integer", "minimum": 1}, "ridge": _NONNEG,
                               "linear": {"type": "boolean"}}},
    },
}

BOUNDS_SCHEMA = {
    "type": "object", "additionalProperties": False, "required": ["schema", "constants", "d", "sigma_sq", "eta"],
    "properties": {
        "schema": {"const": 1},
        "constants": {"type": "object", "required": ["M", "m"], "additionalProperties": False,
                      "properties": {"M": _NONNEG, "m": _POS, "b": _NONNEG, "B": _NONNEG,
                                     "sigma_max_sq": _NONNEG, "tail_C": _POS}},
        "d": {"type": "integer", "minimum": 1}, "sigma_sq": _NONNEG, "eta": _POS,
        "tau": _NONNEG, "k": {"type": "integer", "minimum": 0}, "epsilon": _NONNEG, "R": _NONNEG,
        "alpha": _POS, "k_alpha": {"type": "number"}, "p_inf": _POS, "universal_C": _POS,
        "w2_init": _NONNEG, "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "n": {"type": "number", "minimum": 3}, "rademacher": _NONNEG,
    },
    "anyOf": [{"required": ["tau"]}, {"required": ["k"]}],
}


class ConfigError(ValueError):
    """Carries every violation as (json_pointer, message)."""

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = violations
        super().__init__("; ".join(f"{p or '/'}: {m}" for p, m in violations))

    def to_dict(self) -> dict:
        return {"schema": 1, "error": "config",
                "violations": [{"path": p, "message": m} for p, m in self.violations]}


def _pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def _leaf_errors(err):
    # oneOf failures hide the real cause; report the branch that got furthest
    if err.context:
        best = max(err.context, key=lambda e: len(e.absolute_path))
        if len(best.absolute_path) > len(err.absolute_path):
            yield from _leaf_errors(best)
            return
    yield err


def validate(doc, schema: dict) -> None:
    if not isinstance(doc, dict):
        raise ConfigError([("", "config must be a JSON object")])
    validator = jsonschema.Draft202012Validator(schema)
    found = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        for leaf in _leaf_errors(err):
            found.append((_pointer(leaf.absolute_path), leaf.message))
    if found:
        raise ConfigError(list(dict.fromkeys(found)))


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError([("", f"file not found: {path}")]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([("", f"invalid JSON in {path}: {exc}")]) from None


@dataclass(frozen=True)
class EvaluationConfig:
    w2_method: str = "exact"
    eval_n: int = 512
    snapshot_every: int | None = None
    projections: int = 64


@dataclass(frozen=True)
class LegConfig:
    eta: float
    sigma_sq: float
    steps: int
    model: dict


@dataclass(frozen=True)
class ArmConfig:
    name: str
    legs: tuple[LegConfig, ...]
    attribute: float | None = None

    @property
    def total_steps(self) -> int:
        return sum(leg.steps for leg in self.legs)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    target: DensitySpec
    arms: tuple[ArmConfig, ...]
    chains: int
    init: InitSpec
    evaluation: EvaluationConfig
    seeds: tuple[int, ...]
    output_dir: str
    base_dir: Path
    record_timing: bool = False
    bounds: dict | None = None
    echo: dict = field(default_factory=dict)


def _model_doc(m) -> dict:
    return {"kind": "oracle"} if m is None or m == "oracle" else dict(m)


def _legs(run: dict, default_model, where: str, errors: list) -> tuple[LegConfig, ...]:
    model = _model_doc(run.get("model", default_model))
    if "sampler" in run:
        s = run["sampler"]
        sigma = s.get("sigma_sq", run.get("sigma_sq", 0.0))
        return (LegConfig(s["eta"], sigma, s["steps"], model),)
    legs = tuple(LegConfig(l["eta"], l["sigma_sq"], l["steps"], _model_doc(l.get("model", model)))
                 for l in run["schedule"]["legs"])
    for i, (a, b) in enumerate(zip(legs, legs[1:]), start=1):
        if b.eta > a.eta:
            errors.append((f"{where}/schedule/legs/{i}/eta", "eta must be non-increasing across legs"))
        if b.sigma_sq > a.sigma_sq:
            errors.append((f"{where}/schedule/legs/{i}/sigma_sq",
                           "sigma_sq must be non-increasing across legs"))
    return legs


def resolve_target(doc: dict, base_dir: Path, errors: list) -> DensitySpec | None:
    t = doc["target"]
    try:
        if "zoo" in t:
            z = dist_zoo.zoo()
            if t["zoo"] not in z:
                errors.append(("/target/zoo", f"unknown zoo density {t['zoo']!r}; known: {sorted(z)}"))
                return None
            return z[t["zoo"]]
        if "file" in t:
            p = base_dir / t["file"]
            if not p.is_file():
                errors.append(("/target/file", f"file not found: {p}"))
                return None
            return dist_zoo.load_spec(p)
        return dist_zoo.spec_from_dict(t["inline"])
    except (ValueError, KeyError, TypeError) as exc:
        errors.append(("/target", f"invalid density: {exc}"))
        return None


def _check_model_files(legs, where, base_dir, errors):
    for i, leg in enumerate(legs):
        if leg.model.get("kind") == "file" and not (base_dir / leg.model["path"]).is_file():
            errors.append((f"{where}/model/path", f"file not found: {base_dir / leg.model['path']}"))
        if leg.model.get("kind") == "fitted" and leg.sigma_sq <= 0:
            errors.append((f"{where}/sigma_sq", "a fitted DAE needs sigma_sq > 0"))


def parse_experiment(doc: dict, base_dir=".", compare: bool = False) -> ExperimentConfig:
    """Validate a sample or compare config and resolve it into typed pieces."""
    validate(doc, COMPARE_SCHEMA if compare else SAMPLE_SCHEMA)
    base_dir = Path(base_dir)
    errors: list[tuple[str, str]] = []
    target = resolve_target(doc, base_dir, errors)

    if compare:
        names = [a["name"] for a in doc["arms"]]
        if len(set(names)) != len(names):
            errors.append(("/arms", "arm names must be unique"))
        arms = []
        for i, a in enumerate(doc["arms"]):
            legs = _legs(a, doc.get("model"), f"/arms/{i}", errors)
            _check_model_files(legs, f"/arms/{i}", base_dir, errors)
            arms.append(ArmConfig(a["name"], legs, a.get("attribute")))
        arms = tuple(arms)
    else:
        legs = _legs(doc, None, "", errors)
        _check_model_files(legs, "", base_dir, errors)
        arms = (ArmConfig("main", legs),)

    ev = EvaluationConfig(**doc.get("evaluation", {}))
    if ev.w2_method == "exact" and ev.eval_n > EXACT_CAP:
        errors.append(("/evaluation/eval_n", f"eval_n={ev.eval_n} exceeds the exact-assignment cap {EXACT_CAP}"))
    if ev.eval_n > doc["chains"]:
        errors.append(("/evaluation/eval_n", f"eval_n={ev.eval_n} exceeds chains={doc['chains']}"))

    init = None
    if target is not None:
        idoc = doc.get("init", {"kind": "gaussian", "var": DEFAULT_INIT_VAR})
        mean = idoc.get("mean", [0.0] * target.dim)
        if len(mean) != target.dim:
            errors.append(("/init/mean", f"length {len(mean)} does not match target dim {target.dim}"))
        elif idoc["kind"] == "point":
            init = point_init(mean)
        else:
            init = gaussian_init(target.dim, idoc.get("var", DEFAULT_INIT_VAR), mean)
    if doc.get("bounds") is not None:
        try:
            validate(doc["bounds"], BOUNDS_SCHEMA)
        except ConfigError as exc:
            errors.extend(("/bounds" + p, m) for p, m in exc.violations)
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        experiment=doc["experiment"], target=target, arms=arms, chains=doc["chains"], init=init,
        evaluation=ev, seeds=tuple(doc["seeds"]),
        output_dir=doc.get("output_dir", doc["experiment"]), base_dir=base_dir,
        record_timing=doc.get("record_timing", False), bounds=doc.get("bounds"), echo=doc)


def load_experiment(path, compare: bool = False) -> ExperimentConfig:
    doc = read_json(path)
    return parse_experiment(doc, Path(path).parent, compare)


def resolve_output_dir(output_dir: str, override=None) -> Path:
    """``--out`` wins; else relative dirs sit under $DSMLANGEVIN_OUT (default: cwd)."""
    if override is not None:
        return Path(override)
    p = Path(output_dir)
    if p.is_absolute():
        return p
    return Path(os.environ.get("DSMLANGEVIN_OUT", ".")) / p

