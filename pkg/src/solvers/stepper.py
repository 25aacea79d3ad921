"""
Incremental stepper for the coupled phase-separation / elasticity / damage system.

This module owns the time loop: the initial displacement, one constrained
minimisation per step (routed through the registered block solvers), the
recovery of the chemical potential, and the interpolants of the resulting
trajectory.
"""
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple
import logging
import math

import numpy as np

from ..model.energy import EnergyLedger, MaterialParams, check_assumptions, energy_gradient_c, total_energy
from ..model.errors import ConfigError, ConstraintViolation, SimulationFailed, SolverError
from ..model.grid import BoundaryData, Grid, integrate
from ..model.simplex import DiffusionMode, lagrange_multiplier, project, solve_S_inverse
from .base_solver import BaseSolver, SolverSettings, StepProblem
from .concentration_solver import ConcentrationSolver
from .damage_solver import DamageSolver
from .displacement_solver import DisplacementSolver

logger = logging.getLogger(__name__)

BLOCK_ORDER = ("u", "c", "z")


@dataclass(frozen=True)
class State:
    """One time slice ``(u, c, w, z)`` together with the boundary data it satisfies."""

    t: float
    u: np.ndarray
    c: np.ndarray
    w: np.ndarray
    z: np.ndarray
    boundary: BoundaryData = field(default_factory=BoundaryData)


@dataclass
class Trajectory:
    """States at ``t_m = m tau`` plus per-step diagnostics and energy ledgers.

    Attributes:
        grid: The grid
        params: Material parameters
        mode: Diffusion mode
        tau: Time step
        states: States 0..M
        diagnostics: One record per completed step (index m-1 for step m)
        ledgers: Energy ledger of every state
    """

    grid: Grid
    params: MaterialParams
    mode: DiffusionMode
    tau: float
    states: List[State] = field(default_factory=list)
    diagnostics: List[Dict[str, Any]] = field(default_factory=list)
    ledgers: List[EnergyLedger] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def horizon(self) -> float:
        return self.tau * self.steps

    @property
    def boundary_trace(self) -> List[BoundaryData]:
        return [s.boundary for s in self.states]

    def append(self, state: State, diagnostics: Optional[Dict[str, Any]] = None) -> None:
        self.states.append(state)
        self.ledgers.append(total_energy(state.u, state.c, state.z, self.params, self.grid, state.boundary))
        if diagnostics is not None:
            self.diagnostics.append(diagnostics)


@dataclass
class SimulationSetup:
    """Everything ``run_simulation`` needs, already built from a configuration.

    Attributes:
        grid: The grid
        params: Material parameters
        mode: Diffusion mode
        horizon: Final time T
        steps: Number of time steps M
        boundary: Dirichlet data as a function of time
        c0: Initial concentration
        z0: Initial damage
        settings: Solver tolerances
    """

    grid: Grid
    params: MaterialParams
    mode: DiffusionMode
    horizon: float
    steps: int
    boundary: Callable[[float], BoundaryData]
    c0: np.ndarray
    z0: np.ndarray
    settings: SolverSettings = SolverSettings()

    @property
    def tau(self) -> float:
        return self.horizon / self.steps if self.steps else 0.0


class IncrementalStepper:
    """
    Routes every step of the scheme through the registered block solvers.

    Blocks are swept in the order u, c, z until the joint first-order residual
    of all blocks is below tolerance. Each step keeps a workflow record with
    the calls of every solver.
    """

    def __init__(self, name: str = "Stepper"):
        """Initialize the stepper.

        Args:
            name: The name of the stepper
        """
        self.name = name
        self.registered_solvers: Dict[str, BaseSolver] = {}

    def register_solver(self, block: str, solver: BaseSolver) -> None:
        """Register a block solver.

        Args:
            block: One of ``"u"``, ``"c"``, ``"z"``
            solver: The solver instance to register
        """
        if block not in BLOCK_ORDER:
            raise ValueError(f"unknown block {block!r}, expected one of {BLOCK_ORDER}")
        self.registered_solvers[block] = solver

    def _solver(self, block: str) -> BaseSolver:
        if block not in self.registered_solvers:
            raise SolverError(f"{self.name}: no solver registered for block {block!r}")
        return self.registered_solvers[block]

    def _workflow(self) -> List[Dict[str, Any]]:
        return [{"solver_name": s.name, "calls": dict(s.get_calls())} for s in self.registered_solvers.values()]

    def initial_displacement(
        self,
        c0: np.ndarray,
        z0: np.ndarray,
        b0: BoundaryData,
        params: MaterialParams,
        grid: Grid,
        settings: SolverSettings = SolverSettings(),
        u_guess: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Minimiser of the energy in u for fixed c0, z0 with trace b0 on the Dirichlet faces."""
        solver = self._solver("u")
        solver.clear_calls()
        problem = StepProblem(grid, params, DiffusionMode.ALLEN_CAHN, b0, c0, z0, None, settings)
        u = np.zeros((grid.dim,) + grid.cells) if u_guess is None else np.asarray(u_guess, dtype=float)
        return solver.solve(problem, u, c0, z0)

    def step(
        self,
        prev: State,
        tau: float,
        b_next: BoundaryData,
        params: MaterialParams,
        mode: DiffusionMode,
        grid: Grid,
        settings: SolverSettings = SolverSettings(),
    ) -> Tuple[State, Dict[str, Any]]:
        """Minimise the incremental functional over the constraint set of one step.

        Args:
            prev: State of the previous step
            tau: Time step
            b_next: Dirichlet data at the new time
            params: Material parameters
            mode: Diffusion mode
            grid: The grid
            settings: Tolerances

        Returns:
            The new state and the step diagnostics
        """
        if not tau > 0:
            raise ValueError(f"time step must be positive, got {tau}")
        if prev.z.min() < 0:
            raise ConstraintViolation(f"infeasible step: previous damage has minimum {prev.z.min():.3e}")
        for solver in self.registered_solvers.values():
            solver.clear_calls()
        problem = StepProblem(grid, params, DiffusionMode(mode), b_next, prev.c, prev.z, tau, settings)
        u, c, z = prev.u, prev.c, prev.z
        start = problem.functional(u, c, z)
        boundary_work = start - total_energy(prev.u, prev.c, prev.z, params, grid, prev.boundary).total
        residuals: Dict[str, float] = {}
        outer = 0
        for outer in range(1, settings.max_outer + 1):
            for block in BLOCK_ORDER:
                solver = self._solver(block)
                update = solver.solve(problem, u, c, z)
                if block == "u":
                    u = update
                elif block == "c":
                    c = update
                else:
                    z = update
            residuals = {block: self._solver(block).residual(problem, u, c, z) for block in BLOCK_ORDER}
            logger.debug(f"{self.name}: sweep {outer} residuals {residuals}")
            if max(residuals.values()) <= settings.tol:
                break
        else:
            worst = max(residuals.values())
            logger.error(f"{self.name}: alternating minimisation stalled at residual {worst:.3e}")
            raise SolverError("alternating minimisation did not reach tolerance", worst, outer)
        end = problem.functional(u, c, z)
        state = State(prev.t + tau, u, c, np.zeros_like(c), z, b_next)
        w = recover_potential(c, prev.c, tau, state, params, mode, grid, settings.cg_tol)
        state = replace(state, w=w)
        diagnostics = {
            "outer_iterations": outer,
            "residual_u": residuals["u"],
            "residual_c": residuals["c"],
            "residual_z": residuals["z"],
            "functional_start": start,
            "functional_end": end,
            "boundary_work": boundary_work,
            "min_concentration": float(c.min()),
            "solver_workflow": self._workflow(),
        }
        return state, diagnostics


def default_stepper() -> IncrementalStepper:
    """Stepper with the Newton displacement, trust-region concentration and projected-Newton damage solvers."""
    stepper = IncrementalStepper()
    stepper.register_solver("u", DisplacementSolver())
    stepper.register_solver("c", ConcentrationSolver())
    stepper.register_solver("z", DamageSolver())
    return stepper


def initial_displacement(
    c0: np.ndarray,
    z0: np.ndarray,
    b0: BoundaryData,
    params: MaterialParams,
    grid: Grid,
    tol: float = 1e-9,
    u_guess: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Unique minimiser of ``E(., c0, z0)`` with trace ``b0`` on the Dirichlet faces.

    Args:
        c0: Initial concentration on the simplex
        z0: Initial damage in [0, 1]
        b0: Dirichlet data at t = 0
        params: Material parameters
        grid: The grid
        tol: First-order residual tolerance
        u_guess: Optional starting point

    Returns:
        The displacement field
    """
    return default_stepper().initial_displacement(c0, z0, b0, params, grid, SolverSettings(tol=tol), u_guess)


def incremental_step(
    prev: State,
    tau: float,
    b_next: BoundaryData,
    params: MaterialParams,
    mode: DiffusionMode,
    grid: Grid,
    tol: float = 1e-9,
    settings: Optional[SolverSettings] = None,
) -> State:
    """One step of the scheme; see ``IncrementalStepper.step``."""
    settings = settings or SolverSettings(tol=tol)
    state, _ = default_stepper().step(prev, tau, b_next, params, mode, grid, settings)
    return state


def recover_potential(
    c_new: np.ndarray,
    c_prev: np.ndarray,
    tau: float,
    state_new: State,
    params: MaterialParams,
    mode: DiffusionMode,
    grid: Grid,
    cg_tol: float = 1e-12,
) -> np.ndarray:
    """Chemical potential of a step: ``-S^-1((c_new - c_prev)/tau)``, plus ``P lambda`` in Cahn-Hilliard mode.

    Args:
        c_new: New concentration
        c_prev: Previous concentration
        tau: Time step
        state_new: New state (for the Lagrange multiplier)
        params: Material parameters
        mode: Diffusion mode
        grid: The grid
        cg_tol: CG tolerance

    Returns:
        The chemical potential field ``(N, *cells)``
    """
    rate = (np.asarray(c_new, dtype=float) - np.asarray(c_prev, dtype=float)) / tau
    w = -solve_S_inverse(rate, mode, grid, params.mobility, tol=cg_tol)
    if DiffusionMode(mode) is DiffusionMode.CAHN_HILLIARD:
        lam = lagrange_multiplier(state_new, params, grid, mode)
        w = w + project(lam).reshape((-1,) + (1,) * grid.dim)
    return w


def validate_setup(setup: SimulationSetup) -> List[str]:
    """Violations of the hypotheses a run needs (boundary, initial data, model assumptions)."""
    grid, params = setup.grid, setup.params
    out: List[str] = []
    if not grid.dirichlet_faces:
        out.append("elasticity needs at least one Dirichlet face")
    if params.chemical == "log" and len(grid.dirichlet_faces) != len(grid.faces):
        out.append("logarithmic mode requires every boundary face to be Dirichlet")
    if params.dim != grid.dim:
        out.append(f"material dimension {params.dim} does not match grid dimension {grid.dim}")
    if setup.steps < 0 or (setup.steps > 0 and not setup.horizon > 0):
        out.append(f"need steps >= 0 and a positive horizon, got {setup.steps} steps, T={setup.horizon}")
    c0, z0 = np.asarray(setup.c0), np.asarray(setup.z0)
    if c0.shape != (params.n_components,) + grid.cells:
        out.append(f"initial concentration has shape {c0.shape}")
    elif np.max(np.abs(c0.sum(axis=0) - 1.0)) > 1e-12:
        out.append("initial concentration must lie on the simplex (components sum to 1)")
    elif params.chemical == "log" and c0.min() <= 0:
        out.append("logarithmic mode requires strictly positive initial concentrations")
    if z0.shape != grid.cells:
        out.append(f"initial damage has shape {z0.shape}")
    elif z0.min() < 0 or z0.max() > 1:
        out.append("damage out of [0,1]")
    report = check_assumptions(params)
    out.extend(v for v in report.violations if v not in out)
    return out


def run_simulation(config: Any, stepper: Optional[IncrementalStepper] = None) -> Trajectory:
    """Run the scheme from the initial data to the final time.

    Args:
        config: A ``SimulationSetup`` or any object whose ``build()`` returns one
        stepper: Block-solver routing (default solvers if omitted)

    Returns:
        Trajectory of ``steps + 1`` states
    """
    setup = config if isinstance(config, SimulationSetup) else config.build()
    violations = validate_setup(setup)
    if violations:
        raise ConfigError("setup violates model hypotheses", violations)
    stepper = stepper or default_stepper()
    grid, params, mode, settings = setup.grid, setup.params, DiffusionMode(setup.mode), setup.settings
    c0 = np.asarray(setup.c0, dtype=float)
    z0 = np.asarray(setup.z0, dtype=float)
    b0 = setup.boundary(0.0)
    trajectory = Trajectory(grid, params, mode, setup.tau)
    logger.info(f"Initial displacement on grid {grid.cells}, mode {mode.value}, {setup.steps} steps")
    u0 = stepper.initial_displacement(c0, z0, b0, params, grid, settings)
    w0 = project(energy_gradient_c(u0, c0, z0, params, grid, b0))
    trajectory.append(State(0.0, u0, c0, w0, z0, b0))
    mass0 = np.atleast_1d(integrate(c0, grid))
    for m in range(1, setup.steps + 1):
        prev = trajectory.states[-1]
        try:
            state, diagnostics = stepper.step(prev, setup.tau, setup.boundary(m * setup.tau), params, mode, grid, settings)
        except SolverError as e:
            logger.error(f"Step {m}/{setup.steps} failed: {e}")
            raise SimulationFailed(f"step {m} failed: {e}", trajectory, e.residual, e.iterations) from e
        state = replace(state, t=m * setup.tau)
        trajectory.append(state, diagnostics)
        drift = float(np.max(np.abs(np.atleast_1d(integrate(state.c, grid)) - mass0)))
        logger.info(
            f"Step {m}/{setup.steps}: E={trajectory.ledgers[-1].total:.6e} sweeps={diagnostics['outer_iterations']} "
            f"min z={state.z.min():.4f} mass drift={drift:.2e}"
        )
    return trajectory


def interpolant_eval(traj: Trajectory, t: float, kind: str = "right") -> State:
    """Evaluate a time interpolant of the trajectory.

    ``right`` is constant on ``((m-1) tau, m tau]``, ``left`` on
    ``[m tau, (m+1) tau)``, ``linear`` interpolates between neighbouring states.

    Args:
        traj: The trajectory
        t: Time in [0, T]
        kind: ``"right"``, ``"left"`` or ``"linear"``

    Returns:
        The interpolated state
    """
    if kind not in ("right", "left", "linear"):
        raise ValueError(f"unknown interpolant {kind!r}")
    T = traj.horizon
    slack = 1e-12 * max(1.0, T)
    if t < -slack or t > T + slack:
        raise ValueError(f"t={t} outside [0, {T}]")
    if traj.steps == 0:
        return traj.states[0]
    s = min(max(t / traj.tau, 0.0), float(traj.steps))
    nearest = round(s)
    if abs(s - nearest) <= 1e-12 * max(1.0, s):
        return traj.states[int(nearest)]
    if kind == "right":
        return traj.states[int(math.ceil(s))]
    if kind == "left":
        return traj.states[int(math.floor(s))]
    m = int(math.ceil(s))
    beta = s - (m - 1)
    a, b = traj.states[m - 1], traj.states[m]
    return State(
        t=t,
        u=beta * b.u + (1.0 - beta) * a.u,
        c=beta * b.c + (1.0 - beta) * a.c,
        w=beta * b.w + (1.0 - beta) * a.w,
        z=beta * b.z + (1.0 - beta) * a.z,
        boundary=a.boundary.interpolate(b.boundary, beta),
    )


def interpolation_weight(traj: Trajectory, t: float) -> float:
    """The weight ``beta = t / tau - (m - 1)`` of the linear interpolant on the step containing t."""
    T = traj.horizon
    slack = 1e-12 * max(1.0, T)
    if traj.steps == 0 or t < -slack or t > T + slack:
        raise ValueError(f"t={t} outside [0, {T}]")
    s = t / traj.tau
    m = max(1, int(math.ceil(s - 1e-12)))
    return s - (m - 1)
