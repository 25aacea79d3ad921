"""
Unit tests for the trajectory audits, including runs with injected defects.
"""
import pytest
import numpy as np
import sys
import os
from dataclasses import replace

# Add the project root to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

import src.diagnostics.audit as audit_module
from src.diagnostics.audit import (
    AUDIT_COLUMNS,
    audit_conservation,
    audit_el_residuals,
    audit_energy,
    audit_trajectory,
    audit_vi,
    refinement_ratios,
    strain_integrability_report,
    strain_ratio,
    subgradient,
)
from src.model.energy import MaterialParams, total_energy
from src.model.grid import BoundaryData, make_grid
from src.model.simplex import DiffusionMode
from src.solvers.base_solver import SolverSettings
from src.solvers.stepper import SimulationSetup, Trajectory, run_simulation

SETTINGS = SolverSettings(tol=1e-9)


def _cosine(grid, amplitude):
    x = grid.centers()[0]
    c0 = 0.5 + amplitude * np.cos(np.pi * x)
    return np.stack([c0, 1.0 - c0])


def _run(grid, params, mode, steps, horizon, c0, z0=None, pull=0.0, settings=SETTINGS):
    z0 = np.ones(grid.cells) if z0 is None else z0

    def boundary(t):
        return BoundaryData.constant(grid, {"x+": [pull * t]})

    return run_simulation(SimulationSetup(grid, params, mode, horizon, steps, boundary, c0, z0, settings))


def _copy(traj):
    return Trajectory(traj.grid, traj.params, traj.mode, traj.tau, list(traj.states), list(traj.diagnostics), list(traj.ledgers))


@pytest.fixture(scope="module")
def short_run():
    """Five loaded Cahn-Hilliard steps on 16 cells."""
    grid = make_grid(1, [16], [1.0], [True, True])
    params = MaterialParams.default(1, 2, eigenstrain=np.array([[[0.0]], [[0.1]]]), gamma=0.05, well_height=0.5)
    return _run(grid, params, DiffusionMode.CAHN_HILLIARD, 5, 0.05, _cosine(grid, 0.1), pull=0.5)


def test_clean_run_passes(short_run):
    """Test that an unmodified trajectory passes every audit."""
    report = audit_trajectory(short_run, SETTINGS)
    assert report.passed, report.failures
    assert report.failed_steps == []
    assert len(report.energy) == 5
    assert all(rec["slack_half"] >= -report.tolerance for rec in report.energy)
    assert report.conservation.applicable
    assert report.conservation.max_drift <= 1e-10


def test_rows_follow_column_order(short_run):
    """Test one row per step with the audit columns in order."""
    rows = audit_trajectory(short_run, SETTINGS).rows()
    assert len(rows) == 5
    assert list(rows[0]) == AUDIT_COLUMNS
    assert [row["step"] for row in rows] == [1, 2, 3, 4, 5]
    assert all(row["passed"] for row in rows)


def test_energy_audit_records(short_run):
    """Test the per-step energy records: energies match the ledger and the sharp slack is the smaller one."""
    records = audit_energy(short_run, tol=1e-8)
    assert [rec["step"] for rec in records] == [1, 2, 3, 4, 5]
    for m, rec in enumerate(records, start=1):
        assert rec["energy"] == pytest.approx(short_run.ledgers[m].total, rel=1e-12)
        assert rec["energy_decrease"] == pytest.approx(short_run.ledgers[m - 1].total - short_run.ledgers[m].total, abs=1e-12)
        assert rec["slack_sharp"] <= rec["slack_half"] + 1e-14
        assert rec["z_increase"] <= 1e-12
        assert rec["passed"]


def test_el_residuals_of_a_step(short_run):
    """Test that a computed step satisfies the three identities and a zeroed potential does not."""
    prev, state = short_run.states[4], short_run.states[5]
    args = (short_run.tau, short_run.params, short_run.mode, short_run.grid)
    residuals = audit_el_residuals(state, prev, *args)
    assert set(residuals) == {"el_i", "el_ii", "el_iii"}
    assert max(residuals.values()) <= SETTINGS.audit_tol
    broken = audit_el_residuals(replace(state, w=np.zeros_like(state.w)), prev, *args)
    assert broken["el_ii"] > 1e3 * SETTINGS.audit_tol
    assert broken["el_iii"] == pytest.approx(residuals["el_iii"])


def test_energy_slack_invariant_under_constant_chemical_shift(short_run, monkeypatch):
    """Test that adding a constant to the chemical density leaves the slack unchanged."""
    baseline = audit_energy(short_run)
    volume = short_run.grid.volume

    def shifted(*args, **kwargs):
        ledger = total_energy(*args, **kwargs)
        return replace(ledger, chemical=ledger.chemical + 5.0 * volume)

    monkeypatch.setattr(audit_module, "total_energy", shifted)
    records = audit_energy(short_run)
    for before, after in zip(baseline, records):
        assert after["energy"] == pytest.approx(before["energy"] + 5.0 * volume, abs=1e-10)
        assert after["slack_half"] == pytest.approx(before["slack_half"], abs=1e-10)


def test_energy_slack_vanishes_on_static_trajectory():
    """Test that an unloaded uniform mixture stays put and closes the energy balance exactly."""
    grid = make_grid(1, [16], [1.0], [True, True])
    params = MaterialParams.default(1, 2)
    c0 = np.full((2, 16), 0.5)
    traj = _run(grid, params, DiffusionMode.CAHN_HILLIARD, 10, 0.1, c0)
    assert np.allclose(traj.states[-1].c, c0, atol=1e-14)
    for rec in audit_energy(traj):
        assert rec["boundary_work"] == 0.0
        assert rec["slack_half"] == pytest.approx(0.0, abs=1e-12)
        assert rec["slack_sharp"] == pytest.approx(0.0, abs=1e-12)


def _failures_at(report, step, text):
    return [f for f in report.failures if f.startswith(f"step {step}:") and text in f]


def test_detects_mass_leak(short_run):
    """Test that moving 1e-6 of one phase into another at one cell fails the conservation check at that step."""
    traj = _copy(short_run)
    c = traj.states[3].c.copy()
    c[0, 5] += 1e-6
    c[1, 5] -= 1e-6
    traj.states[3] = replace(traj.states[3], c=c)
    report = audit_trajectory(traj, SETTINGS)
    assert not report.passed
    assert min(report.failed_steps) == 3
    assert _failures_at(report, 3, "mass drift")


def test_detects_damage_increase(short_run):
    """Test that healing at one cell is flagged at that step."""
    traj = _copy(short_run)
    z = traj.states[3].z.copy()
    z[7] = traj.states[2].z[7] + 1e-6
    traj.states[3] = replace(traj.states[3], z=z)
    report = audit_trajectory(traj, SETTINGS)
    assert min(report.failed_steps) == 3
    assert _failures_at(report, 3, "damage increased")


def test_detects_wrong_chemical_potential(short_run):
    """Test that a tangent offset of the chemical potential breaks the potential identity."""
    traj = _copy(short_run)
    offset = 1e-3 * np.array([1.0, -1.0]).reshape(2, 1)
    traj.states[3] = replace(traj.states[3], w=traj.states[3].w + offset)
    report = audit_trajectory(traj, SETTINGS)
    assert report.failed_steps == [3]
    assert _failures_at(report, 3, "el_ii")


def test_conservation_not_applicable_for_allen_cahn(short_run):
    """Test that Allen-Cahn trajectories have no mass check."""
    traj = _copy(short_run)
    traj.mode = DiffusionMode.ALLEN_CAHN
    report = audit_conservation(traj)
    assert not report.applicable
    assert report.max_drift == 0.0


def test_strain_monitor_rejects_p_at_most_two(short_run):
    """Test that the integrability monitor needs p > 2."""
    with pytest.raises(ValueError):
        strain_integrability_report(short_run, p_list=(2.0,))
    rows = strain_integrability_report(short_run, p_list=(4.0, 6.0))
    assert len(rows) == 2 * (short_run.steps + 1)
    assert all(np.isfinite(row["ratio"]) for row in rows)


def test_strain_ratio_of_undeformed_body(grid1d):
    """Test that zero displacement gives a zero ratio."""
    c = np.full((2, 16), 0.5)
    assert strain_ratio(np.zeros((1, 16)), c, grid1d, BoundaryData.constant(grid1d), 4.0) == 0.0


def test_strain_ratio_of_affine_displacement(grid1d):
    """Test |A| / (|A| + |c|^2 + 1) for u = A x with matching end values and a constant mixture."""
    a = 0.3
    u = a * grid1d.centers()[0][None, :]
    c = np.full((2, 16), 0.5)
    boundary = BoundaryData.constant(grid1d, {"x+": [a]})
    assert strain_ratio(u, c, grid1d, boundary, 4.0) == pytest.approx(a / (a + 0.5 + 1.0), rel=1e-12)


def test_subgradient_supported_on_zero_set(short_run):
    """Test that r vanishes where z is positive."""
    state = short_run.states[-1]
    assert np.all(subgradient(state, short_run.params, short_run.grid) == 0.0)
    broken = replace(state, z=np.where(np.arange(16) == 4, 0.0, state.z))
    r = subgradient(broken, short_run.params, short_run.grid)
    assert np.all(r[np.arange(16) != 4] == 0.0)
    assert r[4] <= 0.0


def test_damage_grows_only_where_driving_exceeds_threshold():
    """Test that a soft inclusion with a mismatch strain damages while the stiff surrounding does not."""
    grid = make_grid(1, [32], [1.0], [True, True])
    stiffness = np.stack([0.2 * np.ones((1, 1, 1, 1)), np.ones((1, 1, 1, 1))])
    params = MaterialParams.default(
        1,
        2,
        stiffness=stiffness,
        eigenstrain=np.array([[[0.2]], [[0.0]]]),
        alpha=0.0025,
        beta=0.1,
        gamma=1e-3,
    )
    soft = np.full(32, 0.1)
    soft[12:20] = 0.9
    c0 = np.stack([soft, 1.0 - soft])
    traj = _run(grid, params, DiffusionMode.ALLEN_CAHN, 3, 0.03, c0)
    z = traj.states[-1].z
    assert z[15] < 1.0 - 1e-6
    assert z[16] < 1.0 - 1e-6
    assert np.all(z[:4] >= 1.0 - 1e-12)
    assert np.all(z[-4:] >= 1.0 - 1e-12)
    for m in range(1, traj.steps + 1):
        vi = audit_vi(traj.states[m], traj.states[m - 1], traj.tau, params, grid)
        assert vi["min_slack"] >= -1e-7
        assert vi["support_ok"]


@pytest.mark.slow
def test_spinodal_decomposition_fifty_steps():
    """Test that a 50-step unloaded spinodal run passes the audit with non-increasing energy."""
    grid = make_grid(1, [32], [1.0], [True, True])
    params = MaterialParams.default(1, 2, gamma=0.01)
    traj = _run(grid, params, DiffusionMode.CAHN_HILLIARD, 50, 0.5, _cosine(grid, 0.05))
    report = audit_trajectory(traj, SETTINGS)
    assert report.passed, report.failures
    energies = [ledger.total for ledger in traj.ledgers]
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))
    assert report.conservation.max_drift <= 1e-10
    # the cosine mode is unstable and must grow
    assert np.ptp(traj.states[-1].c[0]) > np.ptp(traj.states[0].c[0])


@pytest.mark.slow
def test_logarithmic_runs_stay_positive_as_delta_shrinks():
    """Test a passing audit per delta and a positive minimum concentration that does not grow as delta shrinks."""
    grid = make_grid(1, [32], [1.0], [True, True])
    A = 0.5 * (np.ones((2, 2)) - np.eye(2))
    minima = []
    for delta in (1e-2, 1e-3):
        params = MaterialParams.default(1, 2, chemical="log", theta=0.2, interaction=A, delta=delta, gamma=0.01)
        traj = _run(grid, params, DiffusionMode.CAHN_HILLIARD, 10, 0.1, _cosine(grid, 0.1))
        report = audit_trajectory(traj, SETTINGS)
        assert report.passed, report.failures
        minima.append(min(report.positivity))
    assert all(m > 0.0 for m in minima)
    assert all(b <= a + 1e-12 for a, b in zip(minima, minima[1:]))


@pytest.mark.slow
def test_strain_monitor_stable_under_refinement():
    """Test that the strain ratio varies by less than 20% over 16, 32 and 64 cells per side."""

    def build(m):
        grid = make_grid(2, [m, m], [1.0, 1.0], {"x-": True, "x+": True})
        eig = np.stack([np.zeros((2, 2)), 0.05 * np.eye(2)])
        params = MaterialParams.default(2, 2, eigenstrain=eig)
        x, y = grid.centers()
        c1 = 0.5 + 0.3 * np.cos(np.pi * x) * np.cos(np.pi * y)
        c0 = np.stack([1.0 - c1, c1])
        return grid, params, c0, np.ones(grid.cells), BoundaryData.constant(grid, {"x+": [0.02, 0.0]})

    rows = refinement_ratios(build, [16, 32, 64])
    ratios = np.array([row["ratio"] for row in rows])
    assert np.all(ratios > 0)
    assert ratios.max() / ratios.min() - 1.0 < 0.2
