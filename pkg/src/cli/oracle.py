"""
Brute-force check of the incremental step on tiny instances.

Every unknown of one step (u, c and z on a 1D grid of four cells) is handed
to a generic constrained optimiser together with a dense re-evaluation of the
incremental functional. The block-coordinate stepper must land on the same
minimiser.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Tuple
import logging
import time

import numpy as np
from scipy.optimize import minimize

from ..model.energy import (
    MaterialParams,
    energy_gradient_c,
    energy_gradient_u,
    energy_gradient_z,
    total_energy,
)
from ..model.errors import SolverError
from ..model.grid import BoundaryData, Grid, make_grid
from ..model.simplex import DiffusionMode
from ..solvers.base_solver import SolverSettings
from ..solvers.stepper import State, default_stepper

logger = logging.getLogger(__name__)

ENERGY_TOL = 1e-6
FIELD_TOL = 1e-4


@dataclass
class OracleInstance:
    """One step problem: previous state, time step and new boundary data."""

    name: str
    grid: Grid
    params: MaterialParams
    mode: DiffusionMode
    tau: float
    prev: State
    b_next: BoundaryData


@dataclass
class OracleResult:
    """Outcome of one comparison.

    Attributes:
        name: Instance name
        functional_step: Incremental functional at the stepper's minimiser
        functional_oracle: Same functional at the brute-force minimiser
        field_gaps: Max-norm difference per field (``u``, ``c``, ``z``)
        elapsed: Wall time of both solves in seconds
    """

    name: str
    functional_step: float
    functional_oracle: float
    field_gaps: Dict[str, float] = field(default_factory=dict)
    elapsed: float = 0.0
    energy_tol: float = ENERGY_TOL
    field_tol: float = FIELD_TOL

    @property
    def energy_gap(self) -> float:
        return abs(self.functional_step - self.functional_oracle)

    @property
    def passed(self) -> bool:
        return self.energy_gap <= self.energy_tol and max(self.field_gaps.values()) <= self.field_tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        gaps = " ".join(f"{k}={v:.2e}" for k, v in self.field_gaps.items())
        return f"{status} {self.name}: energy gap {self.energy_gap:.2e}, field gaps {gaps} ({self.elapsed:.2f}s)"


class DenseStepFunctional:
    """Incremental functional of one step on the stacked unknowns ``x = (u, c, z)``.

    The proximal term uses dense pseudo-inverses of the mobility and the
    Neumann Laplacian instead of the iterative solves of the stepper.
    """

    def __init__(self, instance: OracleInstance):
        self.instance = instance
        grid, params = instance.grid, instance.params
        self.N = params.n_components
        self.sizes = (grid.dim * grid.n_cells, self.N * grid.n_cells, grid.n_cells)
        M_pinv = np.linalg.pinv(params.mobility)
        if instance.mode is DiffusionMode.CAHN_HILLIARD:
            spatial = np.linalg.pinv(grid.laplacian().toarray())
        else:
            spatial = np.eye(grid.n_cells)
        self.prox = np.kron(M_pinv, spatial)

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        grid = self.instance.grid
        a, b, _ = self.sizes
        u = x[:a].reshape((grid.dim,) + grid.cells)
        c = x[a : a + b].reshape((self.N,) + grid.cells)
        z = x[a + b :].reshape(grid.cells)
        return u, c, z

    def stack(self, u: np.ndarray, c: np.ndarray, z: np.ndarray) -> np.ndarray:
        return np.concatenate([u.reshape(-1), c.reshape(-1), z.reshape(-1)])

    def value(self, x: np.ndarray) -> float:
        inst = self.instance
        grid, params, tau, prev = inst.grid, inst.params, inst.tau, inst.prev
        h = grid.cell_volume
        u, c, z = self.split(x)
        dc = (c - prev.c).reshape(-1)
        dz = np.minimum(z - prev.z, 0.0).reshape(-1)
        out = total_energy(u, c, z, params, grid, inst.b_next).total
        out += h * float(np.sum(-params.alpha * dz + 0.5 * params.beta / tau * dz * dz))
        out += 0.5 * h / tau * float(dc @ self.prox @ dc)
        out += 0.5 * params.epsilon * h / tau * float(dc @ dc)
        return out

    def gradient(self, x: np.ndarray) -> np.ndarray:
        inst = self.instance
        grid, params, tau, prev = inst.grid, inst.params, inst.tau, inst.prev
        h = grid.cell_volume
        u, c, z = self.split(x)
        dc = (c - prev.c).reshape(-1)
        dz = np.minimum(z - prev.z, 0.0).reshape(-1)
        g_u = energy_gradient_u(u, c, z, params, grid, inst.b_next).reshape(-1)
        g_c = energy_gradient_c(u, c, z, params, grid, inst.b_next).reshape(-1)
        g_c = g_c + self.prox @ dc / tau + params.epsilon / tau * dc
        g_z = energy_gradient_z(u, c, z, params, grid, inst.b_next).reshape(-1)
        g_z = g_z - params.alpha + params.beta / tau * dz
        return h * np.concatenate([g_u, g_c, g_z])

    def constraints(self) -> List[Dict]:
        """Unit sum of the phases in every cell, plus conserved mass of all but one phase (Cahn-Hilliard)."""
        inst = self.instance
        grid = inst.grid
        a, b, c_ = self.sizes
        m = grid.n_cells
        rows = []
        targets = []
        for i in range(m):
            row = np.zeros(a + b + c_)
            row[a + i : a + b : m] = 1.0
            rows.append(row)
            targets.append(1.0)
        if inst.mode is DiffusionMode.CAHN_HILLIARD:
            mass = inst.prev.c.reshape(self.N, m).sum(axis=1)
            for k in range(self.N - 1):
                row = np.zeros(a + b + c_)
                row[a + k * m : a + (k + 1) * m] = 1.0
                rows.append(row)
                targets.append(mass[k])
        A, rhs = np.array(rows), np.array(targets)
        return [{"type": "eq", "fun": lambda x: A @ x - rhs, "jac": lambda x: A}]

    def bounds(self) -> List[Tuple]:
        a, b, _ = self.sizes
        upper = self.instance.prev.z.reshape(-1)
        return [(None, None)] * (a + b) + [(0.0, float(zp)) for zp in upper]


def brute_force_step(instance: OracleInstance, maxiter: int = 2000) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimise the step functional over all unknowns at once with SLSQP.

    Args:
        instance: The step problem
        maxiter: SLSQP iteration budget

    Returns:
        ``(u, c, z)`` of the minimiser
    """
    functional = DenseStepFunctional(instance)
    prev = instance.prev
    x0 = functional.stack(prev.u, prev.c, prev.z)
    result = minimize(
        functional.value,
        x0,
        jac=functional.gradient,
        method="SLSQP",
        bounds=functional.bounds(),
        constraints=functional.constraints(),
        options={"ftol": 1e-13, "maxiter": maxiter},
    )
    # status 8: no further descent at machine precision
    if not result.success and result.status != 8:
        logger.error(f"SLSQP failed on {instance.name}: {result.message}")
        raise SolverError(f"brute-force minimisation failed on {instance.name}: {result.message}", iterations=result.nit)
    return functional.split(result.x)


def compare_step(instance: OracleInstance, settings: SolverSettings = SolverSettings()) -> OracleResult:
    """Run the block stepper and the brute-force optimiser on one instance."""
    start = time.perf_counter()
    state, _ = default_stepper().step(
        instance.prev, instance.tau, instance.b_next, instance.params, instance.mode, instance.grid, settings
    )
    oracle = brute_force_step(instance)
    functional = DenseStepFunctional(instance)
    ours = (state.u, state.c, state.z)
    gaps = {name: float(np.max(np.abs(a - b))) for name, a, b in zip(("u", "c", "z"), ours, oracle)}
    return OracleResult(
        name=instance.name,
        functional_step=functional.value(functional.stack(*ours)),
        functional_oracle=functional.value(functional.stack(*oracle)),
        field_gaps=gaps,
        elapsed=time.perf_counter() - start,
    )


def make_instance(
    mode: DiffusionMode,
    epsilon: float = 0.0,
    chemical: str = "poly",
    tau: float = 0.05,
    pull: float = 0.2,
) -> OracleInstance:
    """A 1D, four-cell, two-phase step with a boundary pull, an eigenstrain mismatch and partial damage.

    Args:
        mode: Diffusion mode
        epsilon: Weight of the p-gradient damage regularisation
        chemical: ``"poly"`` or ``"log"``
        tau: Time step
        pull: Displacement of the right end at the new time

    Returns:
        The instance
    """
    grid = make_grid(1, [4], [1.0], {"x-": True, "x+": True})
    extra = {"theta": 0.2, "interaction": 0.5 * (np.ones((2, 2)) - np.eye(2))} if chemical == "log" else {}
    params = MaterialParams.default(
        1,
        2,
        eigenstrain=np.array([[[0.0]], [[0.05]]]),
        gamma=0.05,
        chemical=chemical,
        well_height=0.1,
        alpha=1e-3,
        beta=1.0,
        epsilon=epsilon,
        **extra,
    )
    x = grid.centers()[0]
    c1 = 0.5 + 0.2 * np.cos(np.pi * x)
    c_prev = np.stack([c1, 1.0 - c1])
    z_prev = np.array([1.0, 0.9, 0.8, 1.0])
    b_prev = BoundaryData.constant(grid)
    b_next = BoundaryData.constant(grid, {"x+": [pull]})
    u_prev = default_stepper().initial_displacement(c_prev, z_prev, b_prev, params, grid, SolverSettings(tol=1e-11))
    prev = State(0.0, u_prev, c_prev, np.zeros_like(c_prev), z_prev, b_prev)
    name = f"{DiffusionMode(mode).value}-{chemical}-eps{epsilon:g}"
    return OracleInstance(name, grid, params, DiffusionMode(mode), tau, prev, b_next)


SUITES = {
    "small": [
        {"mode": DiffusionMode.ALLEN_CAHN, "epsilon": 0.0},
        {"mode": DiffusionMode.ALLEN_CAHN, "epsilon": 0.1},
        {"mode": DiffusionMode.CAHN_HILLIARD, "epsilon": 0.0},
        {"mode": DiffusionMode.CAHN_HILLIARD, "epsilon": 0.1},
    ],
    "log": [
        {"mode": DiffusionMode.ALLEN_CAHN, "epsilon": 0.0, "chemical": "log"},
        {"mode": DiffusionMode.CAHN_HILLIARD, "epsilon": 0.1, "chemical": "log"},
    ],
}


def run_oracle_suite(suite: str = "small", settings: SolverSettings = SolverSettings(tol=1e-10)) -> List[OracleResult]:
    """Run every instance of a named suite (``small`` or ``log``).

    Args:
        suite: Suite name
        settings: Stepper tolerances

    Returns:
        One result per instance
    """
    if suite not in SUITES:
        raise ValueError(f"unknown oracle suite {suite!r}, expected one of {sorted(SUITES)}")
    results = []
    for case in SUITES[suite]:
        result = compare_step(make_instance(**case), settings)
        logger.info(result.summary())
        results.append(result)
    return results
