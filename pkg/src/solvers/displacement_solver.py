"""
Displacement block: minimise the stored elastic energy (plus the quartic
regularisation) over u with c, z and the Dirichlet data fixed.

The Dirichlet data enters only through the affine offsets of the one-sided
strain operators, so the unknowns are unconstrained cell values.
"""
from typing import List, Tuple
import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from ..model.energy import ElasticTerms, MaterialParams, energy_gradient_u, sym_part
from ..model.errors import SolverError
from ..model.grid import BoundaryData, Grid
from .base_solver import BaseSolver, StepProblem, cellwise_block, l2_norm

logger = logging.getLogger(__name__)


class DisplacementSolver(BaseSolver):
    """
    Newton solver with backtracking for the displacement block.

    The energy is strictly convex in u (strong monotonicity of the stress
    plus the quartic term), so Newton with an Armijo line search converges
    to the unique minimiser; with ``epsilon = 0`` a single step is exact.
    """

    block = "u"

    def __init__(self, name: str = "Displacement"):
        super().__init__(name)

    def _energy(self, u: np.ndarray, c: np.ndarray, z: np.ndarray, params: MaterialParams, grid: Grid, boundary: BoundaryData) -> float:
        total = 0.0
        for side in grid.sides:
            J = grid.displacement_gradient(u, side, boundary)
            dens = ElasticTerms(sym_part(J), c, z, params).density
            if params.epsilon > 0:
                J2 = np.sum(J * J, axis=(0, 1))
                dens = dens + 0.25 * params.epsilon * J2 * J2
            total += float(np.sum(dens))
        return total * grid.cell_volume / len(grid.sides)

    def _gradient_and_hessian(
        self, u: np.ndarray, c: np.ndarray, z: np.ndarray, params: MaterialParams, grid: Grid, boundary: BoundaryData
    ) -> Tuple[np.ndarray, sp.csr_matrix]:
        """Euclidean gradient and Hessian in the flattened cell unknowns."""
        n = grid.dim
        m = grid.n_cells
        weight = grid.cell_volume / len(grid.sides)
        grad = np.zeros(n * m)
        hess = sp.csr_matrix((n * m, n * m))
        for side in grid.sides:
            G = grid.displacement_gradient_operator(side)
            J = grid.displacement_gradient(u, side, boundary)
            terms = ElasticTerms(sym_part(J), c, z, params)
            tau = terms.d_e
            H = terms.d_ee
            if params.epsilon > 0:
                J2 = np.sum(J * J, axis=(0, 1))
                tau = tau + params.epsilon * J2 * J
                eye = np.einsum("ac,bd->abcd", np.eye(n), np.eye(n))
                H = H + params.epsilon * (
                    np.einsum("abcd,...->abcd...", eye, J2) + 2.0 * np.einsum("ab...,cd...->abcd...", J, J)
                )
            grad += weight * (G.T @ tau.reshape(-1))
            hess = hess + weight * (G.T @ cellwise_block(H.reshape((n * n, n * n, m))) @ G)
        return grad, sp.csr_matrix(hess)

    def solve(self, problem: StepProblem, u: np.ndarray, c: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Minimise over u.

        Args:
            problem: The step problem
            u: Initial guess
            c: Concentration (fixed)
            z: Damage (fixed)

        Returns:
            The minimising displacement
        """
        grid, params, boundary = problem.grid, problem.params, problem.boundary
        settings = problem.settings
        tol = 0.1 * settings.tol
        u = np.array(u, dtype=float)
        residuals: List[float] = []
        energy = self._energy(u, c, z, params, grid, boundary)
        for iteration in range(settings.max_block_iterations + 1):
            grad, hess = self._gradient_and_hessian(u, c, z, params, grid, boundary)
            # Riesz representative norm
            res = float(np.linalg.norm(grad) / np.sqrt(grid.cell_volume))
            residuals.append(res)
            if res <= tol:
                break
            if iteration == settings.max_block_iterations:
                logger.error(f"{self.name}: no convergence, residual {res:.3e}")
                raise SolverError(f"{self.name} block did not converge", res, iteration)
            step = spsolve(sp.csc_matrix(hess), -grad)
            if not np.all(np.isfinite(step)):
                raise SolverError(f"{self.name}: singular Hessian (is a Dirichlet face set?)", res, iteration)
            slope = float(grad @ step)
            t = 1.0
            flat = u.reshape(-1)
            while True:
                trial = (flat + t * step).reshape(u.shape)
                trial_energy = self._energy(trial, c, z, params, grid, boundary)
                if trial_energy <= energy + 1e-4 * t * slope or t < 1e-10:
                    break
                t *= 0.5
            u, energy = trial, trial_energy
            logger.debug(f"{self.name}: iteration {iteration} residual {res:.3e} step {t:.2e}")
        self.record_call("newton", {"iterations": len(residuals) - 1, "residual": residuals[-1]})
        return u

    def residual(self, problem: StepProblem, u: np.ndarray, c: np.ndarray, z: np.ndarray) -> float:
        return l2_norm(displacement_residual(u, c, z, problem.params, problem.grid, problem.boundary), problem.grid)


def displacement_residual(
    u: np.ndarray, c: np.ndarray, z: np.ndarray, params: MaterialParams, grid: Grid, boundary: BoundaryData
) -> np.ndarray:
    """L2 gradient of the energy in u at the cells (test directions vanish on the Dirichlet faces)."""
    return energy_gradient_u(u, c, z, params, grid, boundary)
