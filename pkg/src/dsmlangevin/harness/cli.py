"""Command-line entry point: sample, compare, bounds, fit, w2."""

from __future__ import annotations

import argparse
import json
import math
import sys
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import bounds, dist_zoo
from ..sampler import StabilityError
from ..transport import BatchTooLargeError, w2_exact, w2_sliced
from . import experiments as ex
from .config import BOUNDS_SCHEMA, ConfigError, load_experiment, read_json, resolve_output_dir, validate

SWEEPABLE = ("sigma_sq", "eta", "tau", "k", "epsilon", "R", "alpha", "k_alpha", "p_inf",
             "universal_C", "w2_init", "delta", "n", "rademacher", "d")
_INTEGER_FIELDS = ("k", "d")


def _fail(code: int, payload: dict) -> int:
    print(json.dumps(payload), file=sys.stderr)
    return code


def _experiment(args, compare: bool):
    cfg = load_experiment(args.config, compare=compare)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,), echo={**cfg.echo, "seeds": [args.seed]})
    return cfg, resolve_output_dir(cfg.output_dir, args.out)


def cmd_sample(args) -> int:
    cfg, out = _experiment(args, compare=False)
    code, manifest = ex.run_sample(cfg, out)
    print(json.dumps({"schema": 1, "status": manifest["status"], "output_dir": str(out),
                      "divergences": manifest["divergences"]}))
    return code


def cmd_compare(args) -> int:
    cfg, out = _experiment(args, compare=True)
    code, manifest = ex.run_compare(cfg, out)
    with open(out / "comparison.json") as fh:
        report = json.load(fh)
    print(json.dumps({"schema": 1, "status": manifest["status"], "output_dir": str(out),
                      "tally": report["tally"],
                      "median_w2": {a["name"]: a["median_w2"] for a in report["arms"]},
                      "spearman": report.get("spearman")}))
    return code


def cmd_fit(args) -> int:
    doc = read_json(args.config)
    if args.seed is not None:
        doc = {**doc, "seeds": [args.seed]}
    out = resolve_output_dir(doc.get("output_dir", doc.get("experiment", "fit")), args.out)
    code, manifest = ex.run_fit(doc, Path(args.config).parent, out)
    print(json.dumps({"schema": 1, "status": manifest["status"], "output_dir": str(out),
                      "models": [a["path"] for a in manifest["artifacts"] if a["path"].startswith("model_")]}))
    return code


def _report_row(inputs: bounds.BoundInputs) -> dict:
    return bounds.thm1_bound(inputs).to_dict()


def sweep(inputs: bounds.BoundInputs, field: str, lo: float, hi: float, steps: int,
          log: bool = False) -> dict:
    """Tabulate the bound report over one input field; tau is re-derived from k when eta moves."""
    if field not in SWEEPABLE:
        raise ConfigError([("/sweep", f"field {field!r} is not sweepable; choose from {list(SWEEPABLE)}")])
    if steps < 2:
        raise ConfigError([("/sweep", "STEPS must be >= 2")])
    if log and not (lo > 0 and hi > 0):
        raise ConfigError([("/sweep", "log sweeps need LO, HI > 0")])
    grid = np.geomspace(lo, hi, steps) if log else np.linspace(lo, hi, steps)
    rows = []
    for v in grid:
        value = int(round(v)) if field in _INTEGER_FIELDS else float(v)
        try:
            row = {"value": value, **_report_row(inputs.replace(**{field: value}))}
        except ValueError as exc:
            row = {"value": value, "error": str(exc)}
        rows.append(row)
    totals = [r["total"] if isinstance(r.get("total"), float) else math.inf for r in rows]
    best = int(np.argmin(totals))
    return {"schema": 1, "field": field, "scale": "log" if log else "linear", "rows": rows,
            "argmin": rows[best]["value"],
            "interior_minimum": bool(math.isfinite(totals[best]) and 0 < best < len(rows) - 1)}


def cmd_bounds(args) -> int:
    doc = read_json(args.inputs)
    validate(doc, BOUNDS_SCHEMA)
    inputs = bounds.BoundInputs.from_dict(doc)
    if args.sweep:
        field, lo, hi, steps = args.sweep
        try:
            lo, hi, steps = float(lo), float(hi), int(steps)
        except ValueError:
            raise ConfigError([("/sweep", "LO and HI must be numbers, STEPS an integer")]) from None
        print(json.dumps(sweep(inputs, field, lo, hi, steps, args.log)))
    else:
        print(json.dumps(_report_row(inputs)))
    return 0


def cmd_w2(args) -> int:
    a, b = dist_zoo.read_batch_csv(args.a), dist_zoo.read_batch_csv(args.b)
    if args.method == "exact":
        est = w2_exact(a, b)
    else:
        est = w2_sliced(a, b, args.projections, args.seed if args.seed is not None else 0)
    print(json.dumps({"schema": 1, **est.to_dict()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsmlangevin",
                                description="Langevin sampling with denoising score models.")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, text in (("sample", cmd_sample, "run one configured sampler"),
                           ("compare", cmd_compare, "run several arms and tally the winners"),
                           ("fit", cmd_fit, "fit random-feature DAEs and save them as JSON")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("config")
        sp.add_argument("--seed", type=int, default=None, help="replace the config's seed list")
        sp.add_argument("--out", default=None, help="output directory (overrides config and env)")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("bounds", help="evaluate the error bound for a BoundInputs JSON")
    sp.add_argument("inputs")
    sp.add_argument("--sweep", nargs=4, metavar=("FIELD", "LO", "HI", "STEPS"))
    sp.add_argument("--log", action="store_true", help="geometric sweep grid")
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("w2", help="W2 distance between two sample CSVs")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--method", choices=("exact", "sliced"), default="exact")
    sp.add_argument("--projections", type=int, default=64)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_w2)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(ex.EXIT_INPUT, exc.to_dict())
    except StabilityError as exc:
        return _fail(ex.EXIT_INPUT, {"schema": 1, "error": "stability", "message": str(exc)})
    except BatchTooLargeError as exc:
        return _fail(ex.EXIT_INPUT, {"schema": 1, "error": "batch_too_large", "message": str(exc)})
    except (ValueError, OSError) as exc:
        return _fail(ex.EXIT_INPUT, {"schema": 1, "error": "input", "message": str(exc)})
    except Exception as exc:  # noqa: BLE001 - the CLI always answers in JSON
        return _fail(1, {"schema": 1, "error": "internal", "message": str(exc),
                         "traceback": traceback.format_exc()})


if __name__ == "__main__":
    sys.exit(main())
