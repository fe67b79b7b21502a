import json
from pathlib import Path

import numpy as np
import pytest

from dsmlangevin import bounds as bd, dist_zoo
from dsmlangevin.harness import cli, experiments as ex
from dsmlangevin.harness.config import ConfigError, load_experiment, parse_experiment

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def small_sample(**kw):
    doc = {"schema": 1, "experiment": "unit", "target": {"zoo": "gauss_1d"}, "model": "oracle",
           "sigma_sq": 0.0, "sampler": {"eta": 0.05, "steps": 60}, "chains": 128,
           "init": {"kind": "gaussian", "var": 0.01},
           "evaluation": {"w2_method": "exact", "eval_n": 128, "snapshot_every": 20}, "seeds": [0, 1]}
    doc.update(kw)
    return doc


def write(path: Path, doc) -> str:
    path.write_text(json.dumps(doc))
    return str(path)


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_sample_writes_artifacts(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", small_sample())
    code, out, _ = run_cli(capsys, "sample", cfg, "--out", tmp_path / "run")
    assert code == 0 and json.loads(out)["status"] == "ok"
    run = tmp_path / "run"
    lines = [json.loads(l) for l in (run / "metrics.jsonl").read_text().splitlines()]
    assert len(lines) == 2 * 4  # snapshots at 0, 20, 40, 60 for two seeds
    rec = lines[-1]
    for key in ("schema", "experiment", "seed", "leg", "iteration", "wall_time", "w2", "moment", "bounds_ref"):
        assert key in rec
    assert rec["wall_time"] is None
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["config"]["experiment"] == "unit" and manifest["seeds"] == [0, 1]
    assert "numpy" in manifest["versions"]
    pts = dist_zoo.read_batch_csv(run / "samples_seed1.csv")
    assert pts.points.shape == (128, 1)


def test_manifest_hashes_match_files(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", small_sample())
    run_cli(capsys, "sample", cfg, "--out", tmp_path / "run")
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["artifacts"]
    for art in manifest["artifacts"]:
        assert ex.sha256_file(tmp_path / "run" / art["path"]) == art["sha256"]


def test_seed_override_and_env_output_root(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DSMLANGEVIN_OUT", str(tmp_path / "root"))
    cfg = write(tmp_path / "c.json", small_sample(output_dir="rel"))
    code, _, _ = run_cli(capsys, "sample", cfg, "--seed", 7)
    assert code == 0
    manifest = json.loads((tmp_path / "root" / "rel" / "manifest.json").read_text())
    assert manifest["seeds"] == [7]
    assert (tmp_path / "root" / "rel" / "samples_seed7.csv").exists()


def test_negative_eta_names_field(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", small_sample(sampler={"eta": -0.1, "steps": 10}))
    code, out, err = run_cli(capsys, "sample", cfg, "--out", tmp_path / "run")
    assert code != 0 and out == ""
    doc = json.loads(err)
    assert doc["error"] == "config"
    assert any(v["path"].endswith("/eta") for v in doc["violations"])
    assert "eta" in err


def test_config_violations_are_enumerated():
    bad = small_sample(chains=0, seeds=[], evaluation={"w2_method": "bogus", "eval_n": 128})
    with pytest.raises(ConfigError) as info:
        parse_experiment(bad)
    paths = {p for p, _ in info.value.violations}
    assert {"/chains", "/seeds", "/evaluation/w2_method"} <= paths


def test_eval_n_cap_and_missing_files(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_experiment(small_sample(chains=100_000, evaluation={"eval_n": 50_000}))
    assert any(p == "/evaluation/eval_n" for p, _ in info.value.violations)
    with pytest.raises(ConfigError) as info:
        parse_experiment(small_sample(target={"file": "missing.json"}), base_dir=tmp_path)
    assert any(p.startswith("/target") for p, _ in info.value.violations)
    with pytest.raises(ConfigError):
        parse_experiment(small_sample(model={"kind": "file", "path": "nope.json"}), base_dir=tmp_path)


def test_increasing_schedule_rejected():
    doc = small_sample()
    del doc["sampler"], doc["sigma_sq"]
    doc["schedule"] = {"legs": [{"eta": 0.01, "sigma_sq": 0.1, "steps": 5},
                                {"eta": 0.01, "sigma_sq": 0.5, "steps": 5}]}
    with pytest.raises(ConfigError) as info:
        parse_experiment(doc)
    assert any("/schedule/legs/1" in p for p, _ in info.value.violations)


def test_rerun_is_byte_identical(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", small_sample(model={"kind": "perturbed", "epsilon": 0.1,
                                                          "calibration_n": 5000}, sigma_sq=0.1))
    for name in ("a", "b"):
        assert run_cli(capsys, "sample", cfg, "--out", tmp_path / name)[0] == 0
    for f in ("metrics.jsonl", "manifest.json", "samples_seed0.csv", "samples_seed1.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_metrics_jsonl_is_valid_prefix_after_each_write(tmp_path):
    path = tmp_path / "m.jsonl"
    mw = ex.MetricsWriter(path)
    for i in range(3):
        mw.write({"experiment": "e", "seed": 0, "iteration": i, "w2": 0.5})
        # flushed: readable by another handle before close
        assert [json.loads(l)["iteration"] for l in path.read_text().splitlines()] == list(range(i + 1))
    with pytest.raises(ValueError, match="duplicate"):
        mw.write({"experiment": "e", "seed": 0, "iteration": 1})
    mw.close()


def test_unstable_step_rejected_up_front(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", small_sample(sampler={"eta": 5.0, "steps": 400}))
    code, _, err = run_cli(capsys, "sample", cfg, "--out", tmp_path / "run")
    assert code == ex.EXIT_INPUT and json.loads(err)["error"] == "stability"


def test_divergence_is_recorded(tmp_path, capsys, monkeypatch):
    from dsmlangevin.sampler import DivergenceError

    def blow_up(*args, **kwargs):
        raise DivergenceError(leg=0, iteration=17, norm=float("inf"))

    monkeypatch.setattr(ex, "annealed_run", blow_up)
    cfg = write(tmp_path / "c.json", small_sample())
    code, out, _ = run_cli(capsys, "sample", cfg, "--out", tmp_path / "run")
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert code == ex.EXIT_DIVERGED and manifest["status"] == "diverged"
    assert manifest["divergences"] == [{"seed": 0, "leg": 0, "iteration": 17, "norm": "inf"}]


def test_identical_arms_split_evenly(tmp_path):
    arm = {"sigma_sq": 0.0, "sampler": {"eta": 0.05, "steps": 40}}
    doc = small_sample(seeds=list(range(20)), chains=64, evaluation={"eval_n": 64},
                       arms=[{"name": "a", **arm}, {"name": "b", **arm}])
    del doc["sampler"], doc["sigma_sq"]
    cfg = parse_experiment(doc, compare=True)
    code, _ = ex.run_compare(cfg, tmp_path)
    report = json.loads((tmp_path / "comparison.json").read_text())
    assert code == 0 and report["equal_budget"]
    # 95% two-sided Binomial(20, 1/2) band
    assert 5 <= report["tally"]["a"] <= 15
    assert report["tally"]["a"] + report["tally"]["b"] == 20


def test_tally_splits_ties():
    assert ex.tally({"a": [1.0, 2.0, 1.0], "b": [1.0, 1.0, 3.0]}) == {"a": 1.5, "b": 1.5}


def test_compare_needs_two_arms():
    doc = small_sample(arms=[{"name": "a", "sigma_sq": 0.0, "sampler": {"eta": 0.05, "steps": 4}}])
    del doc["sampler"], doc["sigma_sq"]
    with pytest.raises(ConfigError):
        parse_experiment(doc, compare=True)


def test_shipped_configs_load():
    load_experiment(CONFIGS / "oracle_gauss_1d.json")
    for name in ("homotopy_bimodal.json", "eps_sweep.json"):
        cfg = load_experiment(CONFIGS / name, compare=True)
        assert len({a.total_steps for a in cfg.arms}) == 1


SWEEP_BASE = {"schema": 1, "constants": {"M": 0.1, "m": 1.0, "b": 0.0, "B": 0.0, "sigma_max_sq": 1.0},
              "d": 3, "sigma_sq": 0.1, "eta": 0.01, "k": 10000, "epsilon": 0.0, "w2_init": 100.0}


def test_bounds_report(tmp_path, capsys):
    path = write(tmp_path / "b.json", SWEEP_BASE)
    code, out, _ = run_cli(capsys, "bounds", path)
    doc = json.loads(out)
    assert code == 0 and doc["schema"] == 1
    assert doc["total"] == pytest.approx(bd.thm1_bound(bd.BoundInputs.from_dict(SWEEP_BASE)).total)


def test_bounds_sweep_interior_minimum(tmp_path, capsys):
    path = write(tmp_path / "b.json", SWEEP_BASE)
    code, out, _ = run_cli(capsys, "bounds", path, "--sweep", "eta", 0.001, 0.1, 25, "--log")
    doc = json.loads(out)
    assert code == 0 and doc["interior_minimum"]
    assert 0.001 < doc["argmin"] < 0.1


def test_bounds_sweep_monotone_without_mixing():
    inputs = bd.BoundInputs.from_dict({**SWEEP_BASE, "w2_init": 0.0, "epsilon": 0.1, "p_inf": 0.1})
    rows = cli.sweep(inputs, "eta", 0.001, 0.1, 15, log=True)["rows"]
    totals = [r["total"] for r in rows]
    assert all(a < b for a, b in zip(totals, totals[1:]))


def test_bounds_low_dimension_flag(tmp_path, capsys):
    path = write(tmp_path / "b.json", {**SWEEP_BASE, "d": 2, "epsilon": 0.1})
    doc = json.loads(run_cli(capsys, "bounds", path)[1])
    assert doc["C_term"] is None and "C_term_not_covered_d_lt_3" in doc["flags"]


def test_bounds_schema_violation(tmp_path, capsys):
    path = write(tmp_path / "b.json", {**SWEEP_BASE, "eta": -1})
    code, _, err = run_cli(capsys, "bounds", path)
    assert code == ex.EXIT_INPUT and "/eta" in err
    good = write(tmp_path / "g.json", SWEEP_BASE)
    code, _, err = run_cli(capsys, "bounds", good, "--sweep", "colour", 0, 1, 3)
    assert code == ex.EXIT_INPUT and "sweep" in err


def test_w2_command(tmp_path, capsys):
    dist_zoo.write_batch_csv(np.array([[0.0], [1.0]]), tmp_path / "a.csv")
    dist_zoo.write_batch_csv(np.array([[1.0], [2.0]]), tmp_path / "b.csv")
    doc = json.loads(run_cli(capsys, "w2", tmp_path / "a.csv", tmp_path / "b.csv")[1])
    assert doc["schema"] == 1 and doc["value"] == pytest.approx(1.0)
    doc = json.loads(run_cli(capsys, "w2", tmp_path / "a.csv", tmp_path / "b.csv", "--method", "sliced")[1])
    assert doc["value"] == pytest.approx(1.0)


def test_fit_command_round_trip(tmp_path, capsys):
    fit = {"schema": 1, "experiment": "fit_unit", "target": {"zoo": "gauss_1d"}, "sigma_sq": 0.5,
           "fit": {"train_n": 2000, "gamma": 1.0, "features": 32, "ridge": 1e-3}, "seeds": [0], "eval_n": 2000}
    cfg = write(tmp_path / "fit.json", fit)
    code, out, _ = run_cli(capsys, "fit", cfg, "--out", tmp_path / "fit")
    assert code == 0 and json.loads(out)["models"] == ["model_seed0.json"]
    rec = json.loads((tmp_path / "fit" / "metrics.jsonl").read_text())
    assert rec["dae_loss"]["value"] > 0
    # the fitted file drives a sampler run
    sample = small_sample(model={"kind": "file", "path": "fit/model_seed0.json"}, sigma_sq=0.5, seeds=[0],
                          sampler={"eta": 0.01, "steps": 60})
    cfg = write(tmp_path / "s.json", sample)
    code, _, _ = run_cli(capsys, "sample", cfg, "--out", tmp_path / "run")
    assert code == 0


def test_oracle_sample_config_reaches_target(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "sample", CONFIGS / "oracle_gauss_1d.json", "--out", tmp_path)
    assert code == 0
    last = (tmp_path / "metrics.jsonl").read_text().splitlines()[-1]
    rec = json.loads(last)
    assert rec["iteration"] == 2000 and rec["w2"]["method"] == "exact-assignment"
    assert rec["w2"]["value"] <= 0.15
