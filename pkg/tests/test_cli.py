import json

import numpy as np
import pytest
from click.testing import CliRunner

from factorial_rerand import fileio
from factorial_rerand.balance import CovariateMatrix
from factorial_rerand.cli import main


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def workdir(tmp_path):
    rng = np.random.default_rng(42)
    x = CovariateMatrix(rng.normal(size=(32, 2)), names=("x1", "x2"))
    fileio.write_covariates(tmp_path / "cov.csv", x)
    cfg = {
        "design": {"k": 2, "r": 8},
        "covariates": {"path": "cov.csv"},
        "rule": {
            "mode": "chi2",
            "tiers": [{"name": "mains", "effects": ["A", "B"], "joint_prob": 0.25}],
        },
        "seed": 424242,
        "output_dir": "out",
        "test": {"n_draws": 150},
        "simulation": {
            "study": "variance",
            "n_reps": 400,
            "model": {"effects": {"A": 1.5}, "beta": [1.0, 1.0], "target_r2": 0.5},
        },
        "calibration": {"effects": ["A", "B"], "q": 0.5, "n_draws": 2000},
    }
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    return tmp_path, cfg


def _write_cfg(tmp_path, cfg):
    (tmp_path / "run.json").write_text(json.dumps(cfg))


def test_design_command_prints_expanded_matrix(runner):
    result = runner.invoke(main, ["design", "--k", "2", "--expanded"])
    assert result.exit_code == 0
    assert result.output.splitlines() == [
        "combination,mean,A,B,AB",
        "1,1,-1,-1,1",
        "2,1,-1,1,-1",
        "3,1,1,-1,-1",
        "4,1,1,1,1",
    ]


def test_design_command_yates_and_names(runner):
    result = runner.invoke(
        main, ["design", "--k", "2", "--order", "yates", "--factors", "dose,timing"]
    )
    assert result.exit_code == 0
    lines = result.output.splitlines()
    assert lines[0] == "combination,dose,timing"
    assert lines[1] == "1,-1,-1"
    assert lines[2] == "2,1,-1"


def test_allocate_writes_outputs_and_is_reproducible(runner, workdir):
    tmp_path, _ = workdir
    args = ["allocate", "--config", str(tmp_path / "run.json")]
    first = runner.invoke(main, args)
    assert first.exit_code == 0, first.output
    assert "seed: 424242" in first.output
    out = tmp_path / "out"
    alloc_bytes = (out / "allocation.csv").read_bytes()
    manifest = fileio.read_json(out / "manifest.json")
    assert manifest["seed"] == 424242
    assert manifest["draws_attempted"] >= 1
    second = runner.invoke(main, args)
    assert second.exit_code == 0
    assert (out / "allocation.csv").read_bytes() == alloc_bytes
    override = runner.invoke(main, args + ["--seed", "7"])
    assert override.exit_code == 0
    assert (out / "allocation.csv").read_bytes() != alloc_bytes


def test_allocate_generates_seed_when_absent(runner, workdir):
    tmp_path, cfg = workdir
    del cfg["seed"]
    _write_cfg(tmp_path, cfg)
    result = runner.invoke(main, ["allocate", "--config", str(tmp_path / "run.json")])
    assert result.exit_code == 0, result.output
    assert "(generated)" in result.output


def test_diagnose_reports_pass(runner, workdir):
    tmp_path, _ = workdir
    runner.invoke(main, ["allocate", "--config", str(tmp_path / "run.json")])
    result = runner.invoke(
        main,
        [
            "diagnose",
            "--config", str(tmp_path / "run.json"),
            "--allocation", str(tmp_path / "out" / "allocation.csv"),
            "-o", str(tmp_path / "report.csv"),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "acceptance rule: PASS" in result.output
    header = (tmp_path / "report.csv").read_text().splitlines()[0]
    assert header == "effect,covariate,statistic,value"


def test_test_command_runs_and_writes_json(runner, workdir):
    tmp_path, _ = workdir
    runner.invoke(main, ["allocate", "--config", str(tmp_path / "run.json")])
    alloc = fileio.read_allocation(tmp_path / "out" / "allocation.csv")
    x = fileio.read_covariates(tmp_path / "cov.csv")
    rng = np.random.default_rng(9)
    y = x.entries @ np.ones(2) + rng.normal(size=32)
    fileio.write_outcomes(tmp_path / "y.csv", y)
    result = runner.invoke(
        main,
        [
            "test",
            "--config", str(tmp_path / "run.json"),
            "--allocation", str(tmp_path / "out" / "allocation.csv"),
            "--outcomes", str(tmp_path / "y.csv"),
            "-o", str(tmp_path / "test.json"),
        ],
    )
    assert result.exit_code == 0, result.output
    payload = fileio.read_json(tmp_path / "test.json")
    assert payload["n_reference"] == 150
    assert set(payload["p_values"]) == {"A", "B"}
    assert all(0.0 < v <= 1.0 for v in payload["p_values"].values())


def test_simulate_variance_study(runner, workdir):
    tmp_path, _ = workdir
    result = runner.invoke(main, ["simulate", "--config", str(tmp_path / "run.json")])
    assert result.exit_code == 0, result.output
    study = fileio.read_json(tmp_path / "out" / "study" / "study.json")
    assert study["n_reps"] == 400
    assert (tmp_path / "out" / "study" / "reduction.csv").exists()
    assert (tmp_path / "out" / "study" / "estimators.csv").exists()


def test_simulate_independence_study(runner, workdir):
    tmp_path, cfg = workdir
    cfg["simulation"] = {"study": "independence", "n_reps": 2000}
    _write_cfg(tmp_path, cfg)
    result = runner.invoke(main, ["simulate", "--config", str(tmp_path / "run.json")])
    assert result.exit_code == 0, result.output
    assert "joint acceptance" in result.output


def test_calibrate_then_allocate_with_empirical_rule(runner, workdir):
    tmp_path, cfg = workdir
    result = runner.invoke(main, ["calibrate", "--config", str(tmp_path / "run.json")])
    assert result.exit_code == 0, result.output
    thresholds, p = fileio.read_thresholds(tmp_path / "out" / "thresholds.json")
    assert p == 2 and set(thresholds) == {"A", "B"}
    cfg["rule"] = {"mode": "empirical", "thresholds_path": "out/thresholds.json"}
    _write_cfg(tmp_path, cfg)
    rerun = runner.invoke(main, ["allocate", "--config", str(tmp_path / "run.json")])
    assert rerun.exit_code == 0, rerun.output
    manifest = fileio.read_json(tmp_path / "out" / "manifest.json")
    assert manifest["rule"]["mode"] == "empirical"


def test_exit_code_usage(runner):
    result = runner.invoke(main, ["allocate"])
    assert result.exit_code == 2


def test_exit_code_parse_error(runner, workdir):
    tmp_path, cfg = workdir
    result = runner.invoke(main, ["allocate", "--config", str(tmp_path / "nope.json")])
    assert result.exit_code == 3
    cfg["extra"] = True
    _write_cfg(tmp_path, cfg)
    result = runner.invoke(main, ["allocate", "--config", str(tmp_path / "run.json")])
    assert result.exit_code == 3
    assert "unknown keys" in result.output


def test_exit_code_dimension_mismatch(runner, workdir):
    tmp_path, cfg = workdir
    cfg["design"]["r"] = 4  # 16 units, covariate file has 32 rows
    _write_cfg(tmp_path, cfg)
    result = runner.invoke(main, ["allocate", "--config", str(tmp_path / "run.json")])
    assert result.exit_code == 4


def test_exit_code_singular_covariance(runner, workdir):
    tmp_path, cfg = workdir
    x = CovariateMatrix(
        np.column_stack([np.arange(32.0), np.full(32, 2.0)]), names=("x1", "flat")
    )
    fileio.write_covariates(tmp_path / "cov.csv", x)
    result = runner.invoke(main, ["allocate", "--config", str(tmp_path / "run.json")])
    assert result.exit_code == 5
    assert "flat" in result.output


def test_exit_code_max_draws(runner, workdir):
    tmp_path, cfg = workdir
    cfg["rule"]["tiers"][0]["joint_prob"] = 1e-9
    cfg["max_draws"] = 40
    _write_cfg(tmp_path, cfg)
    result = runner.invoke(main, ["allocate", "--config", str(tmp_path / "run.json")])
    assert result.exit_code == 6
