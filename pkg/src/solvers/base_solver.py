"""
Base block solver for the incremental minimisation scheme.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np
import scipy.sparse as sp

from ..model.energy import MaterialParams, dissipation_R, total_energy
from ..model.grid import BoundaryData, Grid, integrate
from ..model.simplex import DiffusionMode, inner_X


@dataclass(frozen=True)
class SolverSettings:
    """Tolerances and iteration budgets shared by every block solver.

    Attributes:
        tol: Joint first-order residual accepted at the end of a step
        cg_tol: Relative residual of the Neumann CG solves
        max_outer: Budget of block sweeps per step
        max_block_iterations: Budget of Newton iterations inside one block
        z_zero_tol: Damage below this value counts as fully damaged
    """

    tol: float = 1e-9
    cg_tol: float = 1e-12
    max_outer: int = 200
    max_block_iterations: int = 100
    z_zero_tol: float = 1e-10

    @property
    def audit_tol(self) -> float:
        return 10.0 * self.tol


@dataclass(frozen=True)
class StepProblem:
    """Data of one minimisation problem of the scheme.

    For the initial displacement ``tau`` is None and only the displacement
    block is used.

    Attributes:
        grid: The grid
        params: Material parameters
        mode: Diffusion mode
        boundary: Dirichlet data at the new time
        c_prev: Concentration of the previous step
        z_prev: Damage of the previous step (upper obstacle)
        tau: Time step
        settings: Tolerances
    """

    grid: Grid
    params: MaterialParams
    mode: DiffusionMode
    boundary: BoundaryData
    c_prev: np.ndarray
    z_prev: np.ndarray
    tau: Optional[float] = None
    settings: SolverSettings = SolverSettings()

    def functional(self, u: np.ndarray, c: np.ndarray, z: np.ndarray) -> float:
        """The incremental functional: energy, damage dissipation and the proximal terms."""
        energy = total_energy(u, c, z, self.params, self.grid, self.boundary).total
        if self.tau is None:
            return energy
        dz = np.minimum(z - self.z_prev, 0.0)
        dc = c - self.c_prev
        value = energy + self.tau * dissipation_R(dz / self.tau, self.params, self.grid)
        value += 0.5 / self.tau * inner_X(dc, dc, self.mode, self.grid, self.params.mobility, self.settings.cg_tol)
        if self.params.epsilon > 0:
            value += 0.5 * self.params.epsilon / self.tau * float(np.sum(integrate(dc * dc, self.grid)))
        return value


class BaseSolver(ABC):
    """Base class for the block solvers of the alternating minimisation."""

    block: str = ""

    def __init__(self, name: str):
        """Initialize the base solver.

        Args:
            name: The name of the solver
        """
        self.name = name
        self.calls: Dict[str, Any] = {}

    @abstractmethod
    def solve(self, problem: StepProblem, u: np.ndarray, c: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Minimise the incremental functional over this solver's block.

        Args:
            problem: The step problem
            u: Current displacement
            c: Current concentration
            z: Current damage

        Returns:
            The updated block field
        """
        pass

    @abstractmethod
    def residual(self, problem: StepProblem, u: np.ndarray, c: np.ndarray, z: np.ndarray) -> float:
        """First-order stationarity measure of this block (L2 norm of the residual field)."""
        pass

    def record_call(self, call_name: str, call_result: Any) -> None:
        """Record a solver call for tracking purposes.

        Args:
            call_name: The name of the call
            call_result: Iterations, residuals and status of the call
        """
        self.calls[call_name] = call_result

    def get_calls(self) -> Dict[str, Any]:
        """Get all recorded calls.

        Returns:
            Dict of calls and their results
        """
        return self.calls

    def clear_calls(self) -> None:
        """Clear all recorded calls."""
        self.calls = {}


def l2_norm(f: np.ndarray, grid: Grid) -> float:
    """Discrete L2 norm over all components."""
    return float(np.sqrt(np.sum(integrate(f * f, grid))))


def cellwise_block(H: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix of per-cell ``k x k`` blocks ``H[:, :, cell]`` in component-major ordering."""
    k = H.shape[0]
    blocks = [[sp.diags(H[i, j]) for j in range(k)] for i in range(k)]
    return sp.csr_matrix(sp.bmat(blocks))
