"""
End-to-end tests for the command line: simulate, audit and exit codes.
"""
import pytest
import json
import sys
import os
import yaml

# Add the project root to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

from src.cli.main import (
    EXIT_AUDIT_FAILED,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    EXIT_SOLVER_FAILURE,
    build_parser,
    main,
    run_command,
)
from src.cli.output import snapshot_name
from src.model.errors import SolverError
from src.solvers.base_solver import BaseSolver
from src.solvers.stepper import default_stepper, run_simulation
import src.cli.main as cli


class FailingSolver(BaseSolver):
    """Damage block that always gives up."""

    block = "z"

    def __init__(self):
        super().__init__("Failing")

    def solve(self, problem, u, c, z):
        raise SolverError("diverged on purpose", 1.0, 3)

    def residual(self, problem, u, c, z):
        return 1.0


def _write_config(tmp_path, steps=2, **changes):
    data = {
        "grid": {"dim": 1, "cells": [8], "extent": [1.0], "dirichlet": {"x-": True, "x+": True}},
        "material": {"gamma": 0.05, "phases": [{"modulus": 1.0}, {"modulus": 1.0, "eigenstrain": 0.1}]},
        "time": {"horizon": 0.01 * steps, "steps": steps},
        "boundary": {"faces": {"x+": {"times": [0.0, 1.0], "values": [[0.0], [0.5]]}}},
        "initial": {"concentration": [0.5, 0.5], "perturbation": 0.1, "perturbation_kind": "cosine"},
        "output": {"root": str(tmp_path / "runs"), "name": "bar"},
    }
    data.update(changes)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


@pytest.fixture(autouse=True)
def no_output_override(monkeypatch):
    monkeypatch.delenv("PHASEFIELD_OUTPUT_ROOT", raising=False)


def test_simulate_zero_steps(tmp_path):
    """Test that zero steps writes the initial snapshot, the ledger, an empty audit and the manifest."""
    path = _write_config(tmp_path, steps=0)
    assert run_command(path, "simulate") == EXIT_OK
    out = tmp_path / "runs" / "bar"
    assert (out / snapshot_name(0)).exists()
    assert not (out / snapshot_name(1)).exists()
    assert (out / "ledger.csv").exists()
    assert (out / "audit.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["status"] == "passed"
    assert manifest["steps_completed"] == 0


def test_simulate_is_deterministic(tmp_path):
    """Test that two runs of one seeded config write byte-identical snapshots, ledger and audit."""
    outputs = []
    for name in ("first", "second"):
        work = tmp_path / name
        work.mkdir()
        initial = {"concentration": [0.5, 0.5], "perturbation": 0.1, "perturbation_kind": "random"}
        path = _write_config(work, steps=3, initial=initial, seed=7)
        assert run_command(path, "simulate") == EXIT_OK
        outputs.append(work / "runs" / "bar")
    first, second = outputs
    names = [snapshot_name(m) for m in range(4)] + ["ledger.csv", "audit.csv"]
    for filename in names:
        assert (first / filename).read_bytes() == (second / filename).read_bytes(), filename


def test_simulate_then_audit(tmp_path, capsys):
    """Test a short run followed by an independent audit of its directory."""
    path = _write_config(tmp_path)
    assert run_command(path, "simulate") == EXIT_OK
    out = tmp_path / "runs" / "bar"
    assert (out / snapshot_name(2)).exists()
    (out / "audit.csv").unlink()
    assert run_command(path, "audit", trajectory_dir=out) == EXIT_OK
    assert (out / "audit.csv").exists()
    assert "passed: 2 steps" in capsys.readouterr().out


def test_audit_detects_tampering(tmp_path, capsys):
    """Test that an unexplained drop of a stored damage value fails the energy audit with status 1."""
    path = _write_config(tmp_path)
    run_command(path, "simulate")
    out = tmp_path / "runs" / "bar"
    snapshot = out / snapshot_name(2)
    lines = snapshot.read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    row = lines[3].split(",")
    row[header.index("z")] = "0.999"
    lines[3] = ",".join(row)
    snapshot.write_text("\n".join(lines) + "\n", encoding="utf-8")
    assert run_command(path, "audit", trajectory_dir=out) == EXIT_AUDIT_FAILED
    assert "step 2" in capsys.readouterr().out


def test_invalid_config_exit_code(tmp_path, capsys):
    """Test that a configuration violating an invariant exits with status 2 and names it."""
    path = _write_config(tmp_path, initial={"damage": 1.5})
    assert run_command(path, "simulate") == EXIT_CONFIG_ERROR
    assert "damage out of [0,1]" in capsys.readouterr().err
    assert not (tmp_path / "runs").exists()


def test_audit_of_missing_directory(tmp_path):
    """Test that auditing a directory without snapshots is a configuration error."""
    path = _write_config(tmp_path)
    assert run_command(path, "audit", trajectory_dir=tmp_path / "nothing") == EXIT_CONFIG_ERROR
    assert run_command(path, "audit") == EXIT_CONFIG_ERROR


def test_solver_failure_exit_code(tmp_path, capsys):
    """Test that an unreachable tolerance exits with status 3."""
    path = _write_config(tmp_path, steps=3, solver={"tol": 1e-30, "max_outer": 1, "max_block_iterations": 2})
    assert run_command(path, "simulate") == EXIT_SOLVER_FAILURE
    assert "solver failure" in capsys.readouterr().err


def test_solver_failure_keeps_partial_run(tmp_path, monkeypatch):
    """Test that a step failure writes the states so far and a solver-failure manifest."""

    def failing_run(setup):
        stepper = default_stepper()
        stepper.register_solver("z", FailingSolver())
        return run_simulation(setup, stepper)

    monkeypatch.setattr(cli, "run_simulation", failing_run)
    path = _write_config(tmp_path, steps=3)
    assert run_command(path, "simulate") == EXIT_SOLVER_FAILURE
    out = tmp_path / "runs" / "bar"
    assert (out / snapshot_name(0)).exists()
    assert not (out / snapshot_name(1)).exists()
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["status"] == "solver-failure"
    assert manifest["steps_completed"] == 0
    assert "diverged" in manifest["error"]


def test_unknown_subcommand():
    """Test that run_command refuses unknown subcommands."""
    with pytest.raises(ValueError):
        run_command(None, "plot")


def test_parser():
    """Test the argument layout of the three subcommands."""
    parser = build_parser()
    args = parser.parse_args(["audit", "c.yaml", "runs/x"])
    assert (args.command, args.config, args.trajectory_dir) == ("audit", "c.yaml", "runs/x")
    assert parser.parse_args(["oracle-check"]).suite == "small"
    with pytest.raises(SystemExit):
        parser.parse_args(["oracle-check", "--suite", "huge"])


def test_main_entry_point(tmp_path):
    """Test main with an argument vector."""
    path = _write_config(tmp_path, steps=1)
    assert main(["simulate", str(path)]) == EXIT_OK
    assert (tmp_path / "runs" / "bar" / snapshot_name(1)).exists()


def test_output_root_from_environment(tmp_path, monkeypatch):
    """Test that PHASEFIELD_OUTPUT_ROOT redirects the run directory."""
    monkeypatch.setenv("PHASEFIELD_OUTPUT_ROOT", str(tmp_path / "elsewhere"))
    path = _write_config(tmp_path, steps=0)
    assert run_command(path, "simulate") == EXIT_OK
    assert (tmp_path / "elsewhere" / "bar" / "manifest.json").exists()


@pytest.mark.slow
def test_oracle_check_command(capsys):
    """Test the oracle-check subcommand on the small suite."""
    assert main(["oracle-check"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 4
