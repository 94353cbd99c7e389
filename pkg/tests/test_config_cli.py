import json
import math

import jsonschema
import pytest

from regensim import report
from regensim.cli import main, resolve_seed, run
from regensim.config import build_model, build_phi, load_config, parse_config, recurrence_params
from regensim.errors import ConfigError
from regensim.models import OuModel, WeakDriftDiffusionModel

SIM = """
model: {kind: ou}
euler: {step: 0.05}
replicas: 2
seed: 5
experiment:
  simulate: {x0: 1.0, horizon: 1.0}
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_and_model():
    cfg = parse_config("")
    assert isinstance(build_model(cfg), OuModel)
    assert cfg.euler.step == 1e-3 and cfg.seed == 0


def test_unknown_key_is_named():
    with pytest.raises(ConfigError) as exc:
        parse_config("experiment:\n  deviation:\n    epsilom: 0.1\n")
    assert exc.value.key == "experiment.deviation.epsilom"


def test_model_tag_is_stripped_from_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("model:\n  kind: weakdrift\n  l: 0.5\n")
    assert exc.value.key == "model.r"


def test_range_violation():
    with pytest.raises(ConfigError) as exc:
        parse_config("phi: {c: 1.0, exponent: 1.0}\n")
    assert exc.value.key == "phi.exponent"


def test_yaml_error_has_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("model:\n  kind: ou\n theta: [1\n")
    assert exc.value.line is not None
    with pytest.raises(ConfigError):
        parse_config("- 1\n- 2\n")


def test_unknown_function_kind():
    with pytest.raises(ConfigError):
        parse_config("experiment:\n  regen_stats:\n    functions: ['cube:2']\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_weakdrift_phi_derivation():
    cfg = parse_config("model: {kind: weakdrift, r: 2.0, l: 0.0, smoothing: 1.0, M: 100.0, p_order: 2}\n")
    assert isinstance(build_model(cfg), WeakDriftDiffusionModel)
    phi = build_phi(cfg)
    assert phi.p_order == pytest.approx(2.0)
    assert phi.c == pytest.approx(4 * (200 / 101 - 1.5))
    with pytest.raises(ConfigError):
        build_phi(parse_config("model: {kind: ou}\n"))
    assert recurrence_params(parse_config("model: {kind: weakdrift, r: 1.0, l: 0.5}\n")) is None


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv("REGENSIM_SEED", raising=False)
    assert resolve_seed(None, 3) == 3
    monkeypatch.setenv("REGENSIM_SEED", "11")
    assert resolve_seed(None, 3) == 11
    assert resolve_seed(7, 3) == 7
    monkeypatch.setenv("REGENSIM_SEED", "x")
    with pytest.raises(ConfigError):
        resolve_seed(None, 3)


def test_simulate_outputs(tmp_path, monkeypatch):
    monkeypatch.delenv("REGENSIM_SEED", raising=False)
    cfg = write(tmp_path, SIM)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    lines = (tmp_path / "a" / "simulate.csv").read_text().split("\n")
    assert lines[0] == "replica,t,x" and lines[-1] == ""
    assert len(lines) == 2 + 2 * 21
    assert lines[1] == "0,0,1"
    summary = json.loads((tmp_path / "a" / "simulate.json").read_text())
    assert summary["seed"] == 5 and summary["passed"] is True
    jsonschema.validate(summary, report.load_schema("simulate"))


def test_env_and_flag_seed(tmp_path, monkeypatch):
    cfg = write(tmp_path, SIM)
    monkeypatch.setenv("REGENSIM_SEED", "9")
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "e")])
    assert json.loads((tmp_path / "e" / "simulate.json").read_text())["seed"] == 9
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "f"), "--seed", "4"])
    assert json.loads((tmp_path / "f" / "simulate.json").read_text())["seed"] == 4


def test_json_format_includes_tables(tmp_path):
    cfg = write(tmp_path, SIM)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "j"), "--format", "json", "--replicas", "1"]) == 0
    data = json.loads((tmp_path / "j" / "simulate.json").read_text())
    assert data["replicas"] == 1
    assert data["tables"]["simulate"]["header"] == ["replica", "t", "x"]
    assert not (tmp_path / "j" / "simulate.csv").exists()


def test_byte_identical_reruns(tmp_path):
    cfg = write(tmp_path, SIM)
    for d in ("r1", "r2"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / d), "--threads", "1"]) == 0
    for name in ("simulate.csv", "simulate.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_exit_codes(tmp_path):
    bad = write(tmp_path, "model: {kind: ou, theta: -1}\n", "bad.yaml")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["explode", "--config", str(bad)]) == 2
    good = write(tmp_path, SIM)
    assert main(["simulate", "--config", str(good), "--threads", "0"]) == 2
    # a singular drift is a domain error
    sing = write(tmp_path, "model: {kind: weakdrift, r: 1.0, l: 0.5, smoothing: 0.0}\n", "sing.yaml")
    assert main(["simulate", "--config", str(sing), "--out", str(tmp_path / "s")]) == 2
    # minorization mass below the floor is a numerical failure
    degen = write(tmp_path, "split: {c_radius: 1.0, window: 0.0005, grid: 64}\n", "degen.yaml")
    assert main(["minorize", "--config", str(degen), "--out", str(tmp_path / "d")]) == 3


def test_assert_failure(tmp_path):
    text = """
model: {kind: ou}
phi: {c: 100.0, exponent: 0.9}
experiment:
  drift_check: {region: [0.0, 5.0], n_grid: 20}
"""
    cfg = write(tmp_path, text)
    out = str(tmp_path / "o")
    assert main(["drift-check", "--config", str(cfg), "--out", out]) == 0
    assert main(["drift-check", "--config", str(cfg), "--out", out, "--assert"]) == 4
    summary = json.loads((tmp_path / "o" / "drift-check.json").read_text())
    assert summary["m0"] is None and summary["checks"]["tail_margins_nonnegative"] is False


def test_drift_check_analytic(configs_dir):
    res = run("drift-check", load_config(configs_dir / "drift_analytic.yaml"))
    assert res.passed and res.summary["expected_margin_error"] <= 1e-12


def test_fuknagaev_runner():
    cfg = parse_config("replicas: 500\nexperiment:\n  fuknagaev: {n: 100, lambda_grid: [5, 50, 500]}\n")
    res = run("fuknagaev", cfg)
    header, rows = res.tables["fuknagaev"]
    assert header == ["lambda", "empirical", "ci_hi", "bound_explicit"]
    assert res.summary["sigma2"] == pytest.approx(1.3125 * 5 / 3)
    assert res.passed


def test_format_value():
    assert report.format_value(0.1) == "0.10000000000000001"
    assert report.format_value(True) == "1"
    assert report.format_value(3) == "3"
    assert report.dumps({"b": math.nan, "a": 1}) == '{\n  "a": 1,\n  "b": null\n}\n'


def test_schema_rejects_extra_keys():
    with pytest.raises(jsonschema.ValidationError):
        report.validate_summary("simulate", {"subcommand": "simulate", "seed": 0, "replicas": 1, "passed": True,
                                             "horizon": 1.0, "step": 0.1, "x0": 0.0, "final_mean": 0.0,
                                             "final_var": None, "bogus": 1})
