"""
Post-hoc certification of trajectories.

Every check recomputes its quantities from the stored states: the discrete
energy inequality, the Euler-Lagrange residuals of each step, the damage
variational inequality with its explicit subgradient, mass conservation,
positivity and the strain integrability monitor. Audits never raise on a
failed check; they return reports.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from ..model.energy import (
    MaterialParams,
    damage_flux,
    elastic_d_z,
    energy_gradient_c,
    energy_gradient_u,
    sym_part,
    total_energy,
)
from ..model.grid import BoundaryData, Grid, integrate
from ..model.simplex import DiffusionMode, apply_S, dual_pairing_S, project
from ..solvers.base_solver import SolverSettings, l2_norm
from ..solvers.stepper import State, Trajectory, initial_displacement

logger = logging.getLogger(__name__)

VI_RANDOM_SAMPLES = 32

AUDIT_COLUMNS = [
    "step",
    "t",
    "slack_half",
    "slack_sharp",
    "boundary_work",
    "energy_decrease",
    "z_increase",
    "z_box_defect",
    "simplex_defect",
    "mass_drift",
    "min_concentration",
    "el_i",
    "el_ii",
    "el_iii",
    "vi_min",
    "vi_step_min",
    "vi_side_min",
    "passed",
]


@dataclass
class ConservationReport:
    """Mass drift per step; not applicable to Allen-Cahn runs."""

    applicable: bool
    drifts: List[np.ndarray] = field(default_factory=list)

    @property
    def max_drift(self) -> float:
        return float(max((np.max(d) for d in self.drifts), default=0.0))


@dataclass
class AuditReport:
    """Per-step audit records and the overall verdict.

    Attributes:
        passed: Every check within its tolerance
        tolerance: Tolerance of the energy, residual and VI checks
        energy: One record per step from ``audit_energy``
        residuals: One record per step from ``audit_el_residuals``
        vi: One record per step from ``audit_vi``
        conservation: Mass drift report
        positivity: Minimum concentration of every state
        strain: Rows of the strain integrability monitor
        failures: Human readable description of each failed check
    """

    passed: bool
    tolerance: float
    energy: List[Dict[str, Any]] = field(default_factory=list)
    residuals: List[Dict[str, float]] = field(default_factory=list)
    vi: List[Dict[str, Any]] = field(default_factory=list)
    conservation: ConservationReport = field(default_factory=lambda: ConservationReport(False))
    positivity: List[float] = field(default_factory=list)
    strain: List[Dict[str, float]] = field(default_factory=list)
    failures: List[str] = field(default_factory=list)
    failed_steps: List[int] = field(default_factory=list)

    def rows(self) -> List[Dict[str, Any]]:
        """One row per step in ``AUDIT_COLUMNS`` order."""
        out = []
        failed = set(self.failed_steps)
        for k, rec in enumerate(self.energy):
            step = rec["step"]
            res = self.residuals[k] if k < len(self.residuals) else {}
            vi = self.vi[k] if k < len(self.vi) else {}
            drift = float(np.max(self.conservation.drifts[k])) if self.conservation.applicable else float("nan")
            row = {
                "step": step,
                "t": rec["t"],
                "slack_half": rec["slack_half"],
                "slack_sharp": rec["slack_sharp"],
                "boundary_work": rec["boundary_work"],
                "energy_decrease": rec["energy_decrease"],
                "z_increase": rec["z_increase"],
                "z_box_defect": rec["z_box_defect"],
                "simplex_defect": rec["simplex_defect"],
                "mass_drift": drift,
                "min_concentration": self.positivity[step],
                "el_i": res.get("el_i", float("nan")),
                "el_ii": res.get("el_ii", float("nan")),
                "el_iii": res.get("el_iii", float("nan")),
                "vi_min": vi.get("min_slack", float("nan")),
                "vi_step_min": vi.get("step_min", float("nan")),
                "vi_side_min": vi.get("side_min", float("nan")),
                "passed": step not in failed,
            }
            out.append({k2: row[k2] for k2 in AUDIT_COLUMNS})
        return out


def _rate_terms(
    state: State, prev: State, tau: float, params: MaterialParams, mode: DiffusionMode, grid: Grid
) -> Tuple[float, float, float, float]:
    """Damage dissipation, sharp damage dissipation, epsilon rate term and <Sw, w> of one step (all times tau)."""
    z_rate = (state.z - prev.z) / tau
    c_rate = (state.c - prev.c) / tau
    lin = float(integrate(-params.alpha * z_rate, grid))
    quad = float(integrate(params.beta * z_rate**2, grid))
    eps_term = params.epsilon * float(np.sum(integrate(c_rate * c_rate, grid)))
    sw = dual_pairing_S(state.w, mode, grid, params.mobility)
    return tau * (lin + 0.5 * quad), tau * (lin + quad), tau * eps_term, tau * sw


def audit_energy(traj: Trajectory, params: Optional[MaterialParams] = None, tol: float = 1e-8) -> List[Dict[str, Any]]:
    """Discrete energy inequality per step, in cumulative form.

    ``slack_half`` is RHS - LHS of
    ``E(q_m) + sum_j tau [R(zdot) + eps/2 |cdot|^2 + 1/2 <S w, w>] <= E(q_0) + sum_j W_j``
    where ``W_j`` is the boundary work of step j. ``slack_sharp`` uses factor 1
    in front of ``<S w, w>`` and of the quadratic rates and is only reported.

    Args:
        traj: Trajectory to audit
        params: Material parameters (default: the trajectory's)
        tol: Scale of the flags, relative to ``1 + |E_0|``

    Returns:
        One record per step m = 1..M
    """
    params = params or traj.params
    grid, mode, tau = traj.grid, traj.mode, traj.tau
    energies = [total_energy(s.u, s.c, np.clip(s.z, 0.0, 1.0), params, grid, s.boundary).total for s in traj.states]
    e0 = energies[0]
    lhs_half = lhs_sharp = rhs = 0.0
    records = []
    for m in range(1, len(traj.states)):
        prev, state = traj.states[m - 1], traj.states[m]
        lifted = total_energy(prev.u, prev.c, np.clip(prev.z, 0.0, 1.0), params, grid, state.boundary).total
        work = lifted - energies[m - 1]
        half, sharp, eps_term, sw = _rate_terms(state, prev, tau, params, mode, grid)
        lhs_half += half + 0.5 * eps_term + 0.5 * sw
        lhs_sharp += sharp + eps_term + sw
        rhs += work
        slack_half = e0 + rhs - (energies[m] + lhs_half)
        records.append(
            {
                "step": m,
                "t": state.t,
                "energy": energies[m],
                "slack_half": slack_half,
                "slack_sharp": e0 + rhs - (energies[m] + lhs_sharp),
                "boundary_work": work,
                "energy_decrease": energies[m - 1] - energies[m],
                "z_increase": float(np.max(state.z - prev.z)),
                "z_box_defect": float(max(-state.z.min(), state.z.max() - 1.0, 0.0)),
                "simplex_defect": float(np.max(np.abs(state.c.sum(axis=0) - 1.0))),
                "passed": slack_half >= -tol * (1.0 + abs(e0)),
            }
        )
    return records


def audit_el_residuals(
    state: State,
    prev: State,
    tau: float,
    params: MaterialParams,
    mode: DiffusionMode,
    grid: Grid,
) -> Dict[str, float]:
    """L2 norms of the residual fields of the three Euler-Lagrange identities of a step.

    Args:
        state: New state
        prev: Previous state
        tau: Time step
        params: Material parameters
        mode: Diffusion mode
        grid: The grid

    Returns:
        ``el_i`` (diffusion law), ``el_ii`` (chemical potential), ``el_iii`` (momentum balance)
    """
    c_rate = (state.c - prev.c) / tau
    el_i = project(c_rate + apply_S(state.w, mode, grid, params.mobility))
    force = energy_gradient_c(state.u, state.c, state.z, params, grid, state.boundary)
    el_ii = project(state.w - force - params.epsilon * c_rate)
    el_iii = energy_gradient_u(state.u, state.c, state.z, params, grid, state.boundary)
    return {"el_i": l2_norm(el_i, grid), "el_ii": l2_norm(el_ii, grid), "el_iii": l2_norm(el_iii, grid)}


def damage_driving_field(state: State, prev: State, tau: float, params: MaterialParams, grid: Grid) -> np.ndarray:
    """L2 representative of ``zeta -> int grad z . grad zeta + (W_z - alpha + beta zdot) zeta`` (with the p-term)."""
    out = np.zeros(grid.cells)
    w_z = np.zeros(grid.cells)
    boundary = state.boundary
    for side in grid.sides:
        gz = grid.side_gradient(state.z, side)
        out += grid.side_gradient_adjoint(damage_flux(gz, params), side)
        J = grid.displacement_gradient(state.u, side, boundary)
        w_z += elastic_d_z(sym_part(J), state.c, state.z, params)
    nsides = len(grid.sides)
    z_rate = (state.z - prev.z) / tau
    return out / nsides + w_z / nsides - params.alpha + params.beta * z_rate


def subgradient(state: State, params: MaterialParams, grid: Grid, z_zero_tol: float = 1e-10) -> np.ndarray:
    """``r = -chi_{z=0} [W_z]^+``, with the zero set taken as ``z < z_zero_tol``."""
    w_z = np.zeros(grid.cells)
    for side in grid.sides:
        J = grid.displacement_gradient(state.u, side, state.boundary)
        w_z += elastic_d_z(sym_part(J), state.c, state.z, params)
    w_z /= len(grid.sides)
    return np.where(state.z < z_zero_tol, -np.maximum(w_z, 0.0), 0.0)


def audit_vi(
    state: State,
    prev: State,
    tau: float,
    params: MaterialParams,
    grid: Grid,
    z_zero_tol: float = 1e-10,
    samples: int = VI_RANDOM_SAMPLES,
    seed: int = 0,
) -> Dict[str, Any]:
    """Sampled damage variational inequality of a step.

    Test family: the negative indicator of every cell plus ``samples`` random
    nonpositive fields drawn with a fixed seed. Three quantities are reported:

    * ``min_slack``: minimum of ``int (A + r) zeta`` over the family (limit form);
    * ``step_min``: the same without r, with zeta zeroed on the zero set;
    * ``side_min``: minimum of ``<r, z - zeta>`` over nonnegative zeta.

    Args:
        state: New state
        prev: Previous state
        tau: Time step
        params: Material parameters
        grid: The grid
        z_zero_tol: Threshold of the zero set
        samples: Number of random test fields
        seed: RNG seed

    Returns:
        Dict with the three minima, the subgradient field and its support check
    """
    rng = np.random.default_rng(seed)
    A = damage_driving_field(state, prev, tau, params, grid)
    r = subgradient(state, params, grid, z_zero_tol)
    h = grid.cell_volume
    zero_set = state.z < z_zero_tol
    fields = -np.abs(rng.standard_normal((samples,) + grid.cells))

    bumps = -(A + r) * h
    randoms = np.sum((A + r) * fields, axis=tuple(range(1, fields.ndim))) * h
    min_slack = float(min(bumps.min(), randoms.min()))

    A_step = np.where(zero_set, 0.0, A)
    step_fields = np.where(zero_set, 0.0, fields)
    step_min = float(min((-A_step * h).min(), (np.sum(A_step * step_fields, axis=tuple(range(1, fields.ndim))) * h).min()))

    rz = float(np.sum(r * state.z)) * h
    side_bumps = rz - r * h
    side_random = rz - np.sum(r * np.abs(fields), axis=tuple(range(1, fields.ndim))) * h
    side_min = float(min(side_bumps.min(), side_random.min()))
    return {
        "min_slack": min_slack,
        "step_min": step_min,
        "side_min": side_min,
        "subgradient": r,
        "support_ok": bool(np.all(r[~zero_set] == 0.0)),
    }


def audit_conservation(traj: Trajectory) -> ConservationReport:
    """Per-step ``|int c_m - int c_0|`` per component (Cahn-Hilliard only)."""
    if DiffusionMode(traj.mode) is not DiffusionMode.CAHN_HILLIARD:
        return ConservationReport(False)
    grid = traj.grid
    mass0 = np.atleast_1d(integrate(traj.states[0].c, grid))
    drifts = [np.abs(np.atleast_1d(integrate(s.c, grid)) - mass0) for s in traj.states[1:]]
    return ConservationReport(True, drifts)


def strain_ratio(u: np.ndarray, c: np.ndarray, grid: Grid, boundary: BoundaryData, p: float) -> float:
    """``||grad u||_{L^p} / (||grad u||_{L^2} + ||c||_{L^{2p}}^2 + 1)``."""
    jac = np.mean([grid.displacement_gradient(u, s, boundary) for s in grid.sides], axis=0)
    mag = np.sqrt(np.sum(jac * jac, axis=(0, 1)))
    cmag = np.sqrt(np.sum(c * c, axis=0))
    lp = float(integrate(mag**p, grid)) ** (1.0 / p)
    l2 = float(integrate(mag**2, grid)) ** 0.5
    c2p = float(integrate(cmag ** (2 * p), grid)) ** (1.0 / (2 * p))
    return lp / (l2 + c2p**2 + 1.0)


def strain_integrability_report(
    traj: Trajectory, params: Optional[MaterialParams] = None, p_list: Sequence[float] = (4.0,)
) -> List[Dict[str, float]]:
    """Ratio of the higher integrability monitor for every state and exponent."""
    rows = []
    for m, state in enumerate(traj.states):
        for p in p_list:
            if not p > 2:
                raise ValueError(f"exponents must exceed 2, got {p}")
            rows.append({"step": m, "p": float(p), "ratio": strain_ratio(state.u, state.c, traj.grid, state.boundary, p)})
    return rows


def refinement_ratios(
    build: Callable[[int], Tuple[Grid, MaterialParams, np.ndarray, np.ndarray, BoundaryData]],
    cells: Sequence[int],
    p: float = 4.0,
    tol: float = 1e-9,
) -> List[Dict[str, float]]:
    """Strain monitor of the initial displacement across a refinement family.

    Args:
        build: Maps a cell count to ``(grid, params, c0, z0, b0)`` of the same continuous problem
        cells: Cell counts to run
        p: Exponent of the monitor
        tol: Solver tolerance

    Returns:
        One row per grid with the ratio
    """
    rows = []
    for m in cells:
        grid, params, c0, z0, b0 = build(m)
        u0 = initial_displacement(c0, z0, b0, params, grid, tol)
        rows.append({"cells": m, "p": p, "ratio": strain_ratio(u0, c0, grid, b0, p)})
        logger.info(f"refinement {grid.cells}: ratio {rows[-1]['ratio']:.4f}")
    return rows


def audit_trajectory(
    traj: Trajectory,
    settings: SolverSettings = SolverSettings(),
    p_list: Sequence[float] = (4.0,),
    seed: int = 0,
) -> AuditReport:
    """Run every audit on a trajectory.

    Args:
        traj: The trajectory
        settings: Solver tolerances; the audit tolerance is ``10 x tol``
        p_list: Exponents of the strain monitor
        seed: Seed of the VI test family

    Returns:
        The aggregated report
    """
    params, grid, mode, tau = traj.params, traj.grid, traj.mode, traj.tau
    tol = settings.audit_tol
    report = AuditReport(passed=True, tolerance=tol)
    report.energy = audit_energy(traj, params, tol)
    report.conservation = audit_conservation(traj)
    report.positivity = [float(s.c.min()) for s in traj.states]
    report.strain = strain_integrability_report(traj, params, p_list)
    e0 = total_energy(traj.states[0].u, traj.states[0].c, traj.states[0].z, params, grid, traj.states[0].boundary).total
    scale = 1.0 + abs(e0)

    def fail(step: int, message: str) -> None:
        report.failures.append(f"step {step}: {message}")
        if step not in report.failed_steps:
            report.failed_steps.append(step)

    for k, rec in enumerate(report.energy):
        m = rec["step"]
        prev, state = traj.states[m - 1], traj.states[m]
        if rec["slack_half"] < -tol * scale:
            fail(m, f"energy inequality violated (slack {rec['slack_half']:.3e})")
        if rec["z_increase"] > 1e-12:
            fail(m, f"damage increased by {rec['z_increase']:.3e}")
        if rec["z_box_defect"] > 1e-12:
            fail(m, f"damage out of [0,1] by {rec['z_box_defect']:.3e}")
        if rec["simplex_defect"] > 1e-12:
            fail(m, f"simplex defect {rec['simplex_defect']:.3e}")
        residuals = audit_el_residuals(state, prev, tau, params, mode, grid)
        report.residuals.append(residuals)
        for name, value in residuals.items():
            if value > tol:
                fail(m, f"Euler-Lagrange residual {name} = {value:.3e}")
        vi = audit_vi(state, prev, tau, params, grid, settings.z_zero_tol, seed=seed + m)
        report.vi.append(vi)
        for name in ("min_slack", "step_min", "side_min"):
            if vi[name] < -tol:
                fail(m, f"variational inequality {name} = {vi[name]:.3e}")
        if not vi["support_ok"]:
            fail(m, "subgradient supported outside the zero set")
        if report.conservation.applicable and np.max(report.conservation.drifts[k]) > 1e-10 * grid.volume:
            fail(m, f"mass drift {np.max(report.conservation.drifts[k]):.3e}")
        if params.chemical == "log" and report.positivity[m] <= 0:
            fail(m, f"concentration not positive (min {report.positivity[m]:.3e})")
    report.passed = not report.failures
    logger.info(f"Audit of {traj.steps} steps: {'pass' if report.passed else 'FAIL'} ({len(report.failures)} failures)")
    return report
