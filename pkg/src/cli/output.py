"""
File output of runs: field snapshots, energy ledger, audit table, manifest
and optional legacy VTK, plus the readers the audit command needs.

CSV column order is fixed; see README.md for the schemas.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
import json
import logging
import platform

import numpy as np
import pandas as pd

from ..diagnostics.audit import AUDIT_COLUMNS, AuditReport
from ..model.grid import AXES, Grid
from ..solvers.stepper import SimulationSetup, State, Trajectory

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

LEDGER_COLUMNS = [
    "step",
    "t",
    "gradient_c",
    "gradient_z",
    "chemical",
    "elastic",
    "reg_u",
    "reg_z",
    "total",
    "min_concentration",
    "outer_iterations",
    "residual_u",
    "residual_c",
    "residual_z",
    "functional_start",
    "functional_end",
    "boundary_work",
]


def snapshot_columns(grid: Grid, n_components: int) -> List[str]:
    """Column order of a field snapshot."""
    axes = AXES[: grid.dim]
    return (
        ["cell"]
        + list(axes)
        + [f"u_{a}" for a in axes]
        + [f"c_{k + 1}" for k in range(n_components)]
        + [f"w_{k + 1}" for k in range(n_components)]
        + ["z"]
    )


def snapshot_frame(state: State, grid: Grid) -> pd.DataFrame:
    """One row per cell (C order of the cell index)."""
    N = state.c.shape[0]
    columns: Dict[str, np.ndarray] = {"cell": np.arange(grid.n_cells)}
    for a, coords in zip(AXES, grid.centers()):
        columns[a] = coords.reshape(-1)
    for a in range(grid.dim):
        columns[f"u_{AXES[a]}"] = state.u[a].reshape(-1)
    for k in range(N):
        columns[f"c_{k + 1}"] = state.c[k].reshape(-1)
    for k in range(N):
        columns[f"w_{k + 1}"] = state.w[k].reshape(-1)
    columns["z"] = state.z.reshape(-1)
    return pd.DataFrame(columns, columns=snapshot_columns(grid, N))


def snapshot_name(step: int) -> str:
    return f"state_{step:05d}.csv"


def write_snapshot(path: Union[str, Path], state: State, grid: Grid) -> None:
    snapshot_frame(state, grid).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_snapshot(path: Union[str, Path], grid: Grid, n_components: int) -> Dict[str, np.ndarray]:
    """Read a snapshot back into field arrays ``u``, ``c``, ``w``, ``z``.

    Args:
        path: CSV file
        grid: Grid the snapshot was written on
        n_components: Number of phases

    Returns:
        Dict of fields
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    expected = snapshot_columns(grid, n_components)
    if list(frame.columns) != expected or len(frame) != grid.n_cells:
        raise ValueError(f"{path}: expected {grid.n_cells} rows with columns {expected}, got {len(frame)} rows {list(frame.columns)}")
    axes = AXES[: grid.dim]
    shape = grid.cells
    return {
        "u": np.stack([frame[f"u_{a}"].to_numpy().reshape(shape) for a in axes]),
        "c": np.stack([frame[f"c_{k + 1}"].to_numpy().reshape(shape) for k in range(n_components)]),
        "w": np.stack([frame[f"w_{k + 1}"].to_numpy().reshape(shape) for k in range(n_components)]),
        "z": frame["z"].to_numpy().reshape(shape),
    }


def ledger_frame(traj: Trajectory) -> pd.DataFrame:
    """Energy ledger of every state plus the per-step solver diagnostics."""
    rows = []
    for m, (state, ledger) in enumerate(zip(traj.states, traj.ledgers)):
        row: Dict[str, Any] = {"step": m, "t": state.t}
        row.update(ledger.as_dict())
        row["min_concentration"] = float(state.c.min())
        diag = traj.diagnostics[m - 1] if m > 0 and m - 1 < len(traj.diagnostics) else {}
        for key in LEDGER_COLUMNS[10:]:
            row[key] = diag.get(key, 0 if key == "outer_iterations" else float("nan"))
        rows.append(row)
    return pd.DataFrame(rows, columns=LEDGER_COLUMNS)


def audit_frame(report: AuditReport) -> pd.DataFrame:
    return pd.DataFrame(report.rows(), columns=AUDIT_COLUMNS)


def write_vtk(path: Union[str, Path], state: State, grid: Grid) -> None:
    """Legacy VTK structured points (cell data) of one state."""
    nx = grid.cells[0]
    ny = grid.cells[1] if grid.dim > 1 else 1
    hx = float(grid.spacing[0])
    hy = float(grid.spacing[1]) if grid.dim > 1 else 1.0

    def flat(f: np.ndarray) -> np.ndarray:
        # VTK runs x fastest
        return f.T.reshape(-1) if grid.dim > 1 else f.reshape(-1)

    lines = [
        "# vtk DataFile Version 3.0",
        f"state t={float(state.t)!r}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx + 1} {ny + 1} 2",
        "ORIGIN 0 0 0",
        f"SPACING {hx!r} {hy!r} 1",
        f"CELL_DATA {nx * ny}",
    ]
    for k in range(state.c.shape[0]):
        lines += [f"SCALARS c_{k + 1} double 1", "LOOKUP_TABLE default"]
        lines += [FLOAT_FORMAT % v for v in flat(state.c[k])]
    lines += ["SCALARS z double 1", "LOOKUP_TABLE default"]
    lines += [FLOAT_FORMAT % v for v in flat(state.z)]
    u = np.zeros((3, nx * ny))
    for a in range(grid.dim):
        u[a] = flat(state.u[a])
    lines += ["VECTORS u double"]
    lines += [" ".join(FLOAT_FORMAT % x for x in u[:, i]) for i in range(nx * ny)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def versions() -> Dict[str, str]:
    import pydantic
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.__version__,
    }


def write_manifest(out_dir: Path, config: Any, traj: Trajectory, status: str, extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write ``manifest.json``: config echo, seed, tolerances, versions and status."""
    manifest = {
        "config": config.model_dump(mode="json"),
        "seed": config.seed,
        "tolerances": config.solver.model_dump(),
        "steps_completed": traj.steps,
        "status": status,
        "versions": versions(),
        "files": {
            "ledger": "ledger.csv",
            "audit": "audit.csv",
            "states": [snapshot_name(m) for m in range(len(traj.states))],
        },
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def write_trajectory(out_dir: Union[str, Path], traj: Trajectory, vtk: bool = False) -> Path:
    """Write every snapshot and the ledger of a trajectory.

    Args:
        out_dir: Output directory (created if missing)
        traj: The trajectory
        vtk: Also write legacy VTK files

    Returns:
        The output directory
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for m, state in enumerate(traj.states):
        write_snapshot(out_dir / snapshot_name(m), state, traj.grid)
        if vtk:
            write_vtk(out_dir / f"state_{m:05d}.vtk", state, traj.grid)
    ledger_frame(traj).to_csv(out_dir / "ledger.csv", index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(traj.states)} snapshots to {out_dir}")
    return out_dir


def write_audit(out_dir: Union[str, Path], report: AuditReport) -> Path:
    path = Path(out_dir) / "audit.csv"
    audit_frame(report).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def read_trajectory(out_dir: Union[str, Path], setup: SimulationSetup) -> Trajectory:
    """Rebuild a trajectory from its snapshots; boundary data comes from the setup's schedule.

    Args:
        out_dir: Directory written by ``write_trajectory``
        setup: The run's setup (grid, parameters, schedule)

    Returns:
        The trajectory
    """
    out_dir = Path(out_dir)
    files = sorted(out_dir.glob("state_*.csv"))
    if not files:
        raise FileNotFoundError(f"no snapshots in {out_dir}")
    traj = Trajectory(setup.grid, setup.params, setup.mode, setup.tau)
    ledger_path = out_dir / "ledger.csv"
    ledger = pd.read_csv(ledger_path, float_precision="round_trip") if ledger_path.exists() else None
    for m, path in enumerate(files):
        if path.name != snapshot_name(m):
            raise FileNotFoundError(f"missing snapshot {snapshot_name(m)} in {out_dir}")
        fields = read_snapshot(path, setup.grid, setup.params.n_components)
        t = m * setup.tau
        diagnostics = None
        if m > 0 and ledger is not None and m < len(ledger):
            diagnostics = {key: ledger.loc[m, key] for key in LEDGER_COLUMNS[10:]}
        traj.append(State(t, fields["u"], fields["c"], fields["w"], fields["z"], setup.boundary(t)), diagnostics)
    return traj
