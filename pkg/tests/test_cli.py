import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml

from sdd_galerkin.cli import EXIT_BLOWUP, EXIT_CHECK_FAILED, EXIT_IO, EXIT_OK, EXIT_PRECONDITION
from sdd_galerkin.cli import execute, main
from sdd_galerkin.config import build_experiment, load_config, set_path
from sdd_galerkin.errors import ConfigError
from sdd_galerkin.solver import read_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def raw(name):
    return yaml.safe_load((CONFIGS / f"{name}.yaml").read_text())


def write(tmp_path, data, name="exp.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def report(out):
    return [json.loads(line) for line in (Path(out) / "report.jsonl").read_text().splitlines()]


# -- configuration -------------------------------------------------------------


def test_load_heat_config():
    exp = load_config(CONFIGS / "heat.yaml")
    assert exp.kind == "simulate"
    assert exp.solver.dt == 1e-3
    assert exp.problem.domain.L == pytest.approx(math.pi)
    assert exp.problem.nonlinearity.polynomial


def test_polynomial_expressions_become_coefficients():
    exp = build_experiment(set_path(raw("dissipative"), "problem.g", {"expr": "0.1*v + u*v**2"}))
    nl = exp.problem.nonlinearity
    assert nl.f.tolist() == [0.0, 0.0, 0.0, -1.0]
    assert nl.g[0, 1] == pytest.approx(0.1) and nl.g[1, 2] == 1.0


def test_non_polynomial_expression_is_callable():
    exp = load_config(CONFIGS / "exp_audit.yaml")
    f = exp.problem.nonlinearity.f
    assert callable(f)
    assert f(np.array([0.0]))[0] == 1.0


def test_equal_exponents_rejected_citing_dissipation():
    bad = set_path(raw("heat"), "problem.constants.beta0", 1)
    with pytest.raises(ConfigError) as info:
        build_experiment(bad)
    assert any("dissipation condition" in v for v in info.value.violations)


def test_all_violations_reported():
    bad = raw("heat")
    del bad["solver"]["dt"]
    bad["kind"] = "simulation"
    bad["problem"]["constants"]["beta0"] = 1
    with pytest.raises(ConfigError) as info:
        build_experiment(bad)
    v = info.value.violations
    assert any("'dt' is a required property" in m for m in v)
    assert any("kind" in m for m in v)
    assert any("beta0" in m for m in v)


def test_bad_expression_reported():
    bad = set_path(raw("heat"), "problem.f", {"expr": "u +* 2"})
    bad = set_path(bad, "problem.g", {"expr": "w"})
    with pytest.raises(ConfigError) as info:
        build_experiment(bad)
    assert len(info.value.violations) == 2


def test_yaml_parse_error(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("kind: [simulate\n")
    with pytest.raises(ConfigError, match="parse error"):
        load_config(path)


def test_expression_history_and_forcing():
    exp = load_config(CONFIGS / "manufactured.yaml")
    x = np.linspace(0.1, 3.0, 5)
    assert np.allclose(exp.problem.history(-0.5, x), np.exp(0.5) * np.sin(x))
    coef = exp.problem.forcing.terms[1].coef
    assert coef(1.0) == pytest.approx(-1.0)


def test_two_dimensional_modes():
    data = raw("heat")
    data["problem"]["domain"] = {"d": 2, "L": "pi", "L2": "pi"}
    data["problem"]["history"] = {"modes": {"1,2": 1.0}}
    exp = build_experiment(data)
    assert exp.problem.history.modes == {(1, 2): 1.0}


# -- runs ----------------------------------------------------------------------


def test_simulate_heat(tmp_path):
    out = execute(load_config(CONFIGS / "heat.yaml"), tmp_path / "heat")
    assert out.exit_code == EXIT_OK
    cols = read_csv(tmp_path / "heat" / "trajectory.csv")
    m = cols["t"] >= 0
    assert np.max(np.abs(cols["l2"][m] - np.exp(-cols["t"][m]))) < 1e-12
    manifest = json.loads((tmp_path / "heat" / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and "wall_time_s" in manifest
    assert set(manifest["files"]) == {"trajectory.csv", "report.jsonl"}


def test_same_config_bitwise_identical_artifacts(tmp_path):
    exp = load_config(CONFIGS / "oracle.yaml")
    a = execute(exp, tmp_path / "a")
    b = execute(load_config(CONFIGS / "oracle.yaml"), tmp_path / "b")
    assert a.exit_code == b.exit_code == EXIT_OK
    for name in ("trajectory.csv", "oracle.csv", "report.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    ma.pop("wall_time_s"), mb.pop("wall_time_s")
    assert ma == mb


def test_dump_modes(tmp_path):
    execute(load_config(CONFIGS / "heat.yaml"), tmp_path, dump_modes=True)
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0].split(",")
    assert header[-1] == "a8"


def test_verify_estimates_subcritical_q(tmp_path, capsys):
    data = set_path(raw("dissipative"), "problem.q", 4)
    code = main(["run", str(write(tmp_path, data)), "--out", str(tmp_path / "o")])
    assert code == EXIT_PRECONDITION
    err = capsys.readouterr().err
    assert "q_c = max{2p, 2beta, p0}" in err
    assert "sdd_galerkin.model" in err


def test_check_hypotheses_exponential(tmp_path, capsys):
    code = main(["run", str(CONFIGS / "exp_audit.yaml"), "--out", str(tmp_path)])
    assert code == EXIT_CHECK_FAILED
    stdout = capsys.readouterr().out
    assert "FAIL   growth" in stdout and "witness" in stdout
    recs = {r["check_id"]: r for r in report(tmp_path)}
    assert recs["growth"]["margins"]["witness"]["u"] == 50.0


def test_check_hypotheses_cubic_passes(tmp_path):
    data = set_path(raw("dissipative"), "kind", "check-hypotheses")
    out = execute(data, tmp_path)
    assert out.exit_code == EXIT_OK
    recs = {r["check_id"]: r for r in report(tmp_path)}
    assert recs["delay-lipschitz"]["fitted"]["L_tau"] > 0
    assert recs["critical-exponent"]["fitted"]["q_c"] == 6.0


def test_blowup_exit_code(tmp_path):
    data = set_path(raw("heat"), "problem.f", {"expr": "u**3"})
    data = set_path(data, "problem.history", {"modes": {1: 10.0}})
    out = execute(data, tmp_path)
    assert out.exit_code == EXIT_BLOWUP
    assert report(tmp_path)[0]["verdict"] == "BLOWUP"


def test_converge_run(tmp_path):
    data = set_path(raw("converge"), "converge.k_levels", [8, 16, 32])
    out = execute(data, tmp_path, jobs=3)
    assert out.exit_code == EXIT_OK
    assert (tmp_path / "trajectory_k32.csv").exists()


def test_failed_oracle_comparison_exit_code(tmp_path):
    data = set_path(raw("oracle"), "oracle.tolerance", 1e-9)
    assert execute(data, tmp_path).exit_code == EXIT_CHECK_FAILED


def test_sweep_concurrent_matches_serial(tmp_path):
    data = set_path(raw("sweep"), "solver.T", 0.5)
    par = execute(data, tmp_path / "par", jobs=4)
    ser = execute(data, tmp_path / "ser", jobs=1)
    assert par.exit_code == ser.exit_code == EXIT_OK
    assert len(report(tmp_path / "par")) == 6
    for i in range(6):
        name = f"run_{i:03d}/trajectory.csv"
        assert (tmp_path / "par" / name).read_bytes() == (tmp_path / "ser" / name).read_bytes()


def test_every_report_entry_has_reference(tmp_path):
    data = set_path(raw("dissipative"), "solver.T", 2.0)
    execute(data, tmp_path, jobs=3)
    for rec in report(tmp_path):
        assert rec["reference"]


def test_io_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.yaml")]) == EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code = main(["run", str(CONFIGS / "heat.yaml"), "--out", str(blocker / "sub")])
    assert code == EXIT_IO


def test_schema_error_exit_code(tmp_path, capsys):
    data = raw("heat")
    del data["solver"]["dt"]
    assert main(["run", str(write(tmp_path, data))]) == EXIT_PRECONDITION
    assert "'dt' is a required property" in capsys.readouterr().err


def test_example_configs_validate():
    for path in sorted(CONFIGS.glob("*.yaml")):
        assert load_config(path).kind


def test_default_output_directory(tmp_path, monkeypatch):
    shutil.copy(CONFIGS / "heat.yaml", tmp_path / "heat.yaml")
    monkeypatch.chdir(tmp_path)
    assert main(["run", "heat.yaml"]) == EXIT_OK
    assert (tmp_path / "runs" / "heat" / "manifest.json").exists()
