"""
Command line entry point.

    python -m src.cli.main simulate <config.yaml>
    python -m src.cli.main audit <config.yaml> <trajectory-dir>
    python -m src.cli.main oracle-check [--suite small]

Exit status: 0 pass, 1 audit failure, 2 configuration error, 3 solver failure.
"""
from pathlib import Path
from typing import List, Optional, Union
import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from ..diagnostics.audit import audit_trajectory
from ..model.errors import ConfigError, SimulationFailed, SolverError
from ..solvers.stepper import run_simulation
from .config import ModelConfig, parse_config
from .oracle import SUITES, run_oracle_suite
from .output import read_trajectory, write_audit, write_manifest, write_trajectory

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_AUDIT_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_SOLVER_FAILURE = 3

SUBCOMMANDS = ("simulate", "audit", "oracle-check")


def output_dir(config: ModelConfig) -> Path:
    return Path(config.output.root) / config.output.name


def _load(config: Union[str, Path, ModelConfig]) -> ModelConfig:
    return config if isinstance(config, ModelConfig) else parse_config(config)


def _simulate(config: ModelConfig) -> int:
    setup = config.build()
    out_dir = output_dir(config)
    try:
        traj = run_simulation(setup)
    except SimulationFailed as e:
        write_trajectory(out_dir, e.trajectory, config.output.vtk)
        write_manifest(
            out_dir, config, e.trajectory, "solver-failure", {"error": str(e), "residual": e.residual, "iterations": e.iterations}
        )
        print(f"solver failure after {e.trajectory.steps} steps: {e}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE
    write_trajectory(out_dir, traj, config.output.vtk)
    report = audit_trajectory(traj, setup.settings, seed=config.seed)
    write_audit(out_dir, report)
    status = "passed" if report.passed else "audit-failed"
    write_manifest(out_dir, config, traj, status, {"audit_failures": report.failures})
    print(f"{status}: {traj.steps} steps written to {out_dir}")
    for failure in report.failures:
        print(f"  {failure}")
    return EXIT_OK if report.passed else EXIT_AUDIT_FAILED


def _audit(config: ModelConfig, trajectory_dir: Union[str, Path]) -> int:
    setup = config.build()
    try:
        traj = read_trajectory(trajectory_dir, setup)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot read trajectory {trajectory_dir}", [str(e)]) from e
    report = audit_trajectory(traj, setup.settings, seed=config.seed)
    write_audit(trajectory_dir, report)
    print(f"{'passed' if report.passed else 'audit-failed'}: {traj.steps} steps in {trajectory_dir}")
    for failure in report.failures:
        print(f"  {failure}")
    return EXIT_OK if report.passed else EXIT_AUDIT_FAILED


def _oracle_check(suite: str) -> int:
    results = run_oracle_suite(suite)
    for result in results:
        print(result.summary())
    return EXIT_OK if all(r.passed for r in results) else EXIT_AUDIT_FAILED


def run_command(
    config: Union[str, Path, ModelConfig, None],
    subcommand: str,
    trajectory_dir: Union[str, Path, None] = None,
    suite: str = "small",
) -> int:
    """Run one subcommand and map its outcome to an exit status.

    Args:
        config: Path of a YAML config or a validated config (unused by ``oracle-check``)
        subcommand: ``simulate``, ``audit`` or ``oracle-check``
        trajectory_dir: Directory of an existing run (``audit``)
        suite: Oracle suite name (``oracle-check``)

    Returns:
        Exit status
    """
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}, expected one of {SUBCOMMANDS}")
    try:
        if subcommand == "oracle-check":
            return _oracle_check(suite)
        model_config = _load(config)
        if subcommand == "simulate":
            return _simulate(model_config)
        if trajectory_dir is None:
            raise ConfigError("audit needs a trajectory directory")
        return _audit(model_config, trajectory_dir)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except SolverError as e:
        logger.error(f"Solver failure: {e}")
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Phase separation with elasticity and damage: incremental minimisation runs.")
    sub = parser.add_subparsers(dest="command", required=True)
    simulate = sub.add_parser("simulate", help="Run a simulation and audit it")
    simulate.add_argument("config", help="YAML configuration file")
    audit = sub.add_parser("audit", help="Audit an existing trajectory")
    audit.add_argument("config", help="YAML configuration the trajectory was produced with")
    audit.add_argument("trajectory_dir", help="Directory written by simulate")
    oracle = sub.add_parser("oracle-check", help="Compare single steps with a brute-force optimiser")
    oracle.add_argument("--suite", default="small", choices=sorted(SUITES))
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    logging.basicConfig(
        level=os.environ.get("PHASEFIELD_LOG_LEVEL", "INFO").upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    args = build_parser().parse_args(argv)
    return run_command(
        getattr(args, "config", None),
        args.command,
        trajectory_dir=getattr(args, "trajectory_dir", None),
        suite=getattr(args, "suite", "small"),
    )


if __name__ == "__main__":
    sys.exit(main())
