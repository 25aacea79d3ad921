"""
Concentration block of the incremental scheme.

The update is parametrised in reduced coordinates ``c = c_prev + Q Y B^T``:
Q is an orthonormal basis of the simplex tangent space and B is the identity
(Allen-Cahn) or the non-constant Neumann eigenvectors (Cahn-Hilliard). Every
iterate therefore satisfies the simplex constraint and, in Cahn-Hilliard mode,
mass conservation exactly, and the H^-1 proximal term is diagonal in Y.
"""
from functools import lru_cache
from typing import Tuple
import logging

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import minimize

from ..model.energy import (
    ElasticTerms,
    MaterialParams,
    chemical_density,
    chemical_hess,
    energy_gradient_c,
    sym_part,
)
from ..model.errors import SolverError
from ..model.grid import Grid
from ..model.simplex import DiffusionMode, mobility_pinv, project, solve_S_inverse, tangent_basis
from .base_solver import BaseSolver, StepProblem, cellwise_block, l2_norm

logger = logging.getLogger(__name__)


@lru_cache(maxsize=None)
def neumann_eigenbasis(grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of the Neumann Laplacian without the constant mode.

    Returns:
        Eigenvalues ``(n_cells - 1,)`` and orthonormal eigenvectors as columns
    """
    values, vectors = scipy.linalg.eigh(grid.laplacian().toarray())
    return values[1:], vectors[:, 1:]


@lru_cache(maxsize=None)
def gradient_hessian(grid: Grid, gamma_key: bytes, N: int) -> np.ndarray:
    """Dense Hessian of the side-averaged ``1/2 Gamma grad c : grad c`` (divided by the cell volume)."""
    n = grid.dim
    Gamma = np.frombuffer(gamma_key).reshape(N * n, N * n)
    total = sp.csr_matrix((N * grid.n_cells, N * grid.n_cells))
    for side in grid.sides:
        K = sp.kron(sp.identity(N), grid.scalar_gradient_operator(side))
        total = total + K.T @ sp.kron(sp.csr_matrix(Gamma), sp.identity(grid.n_cells)) @ K
    return total.toarray() / len(grid.sides)


class ConcentrationSolver(BaseSolver):
    """
    Trust-region Newton solver for the concentration block.

    The reduced Hessian is assembled densely, so this block targets desk-scale
    grids. Indefinite Hessians (spinodal region) are handled by the exact
    trust-region subproblem.
    """

    block = "c"

    def __init__(self, name: str = "Concentration"):
        super().__init__(name)

    def _setup(self, problem: StepProblem):
        grid = problem.grid
        N = problem.params.n_components
        Q = tangent_basis(N)
        Mq = Q.T @ mobility_pinv(problem.params.mobility) @ Q
        if DiffusionMode(problem.mode) is DiffusionMode.CAHN_HILLIARD:
            mu, B = neumann_eigenbasis(grid)
            weights = 1.0 / mu
        else:
            B = np.eye(grid.n_cells)
            weights = np.ones(grid.n_cells)
        return Q, Mq, B, weights

    def _energy(self, c: np.ndarray, u: np.ndarray, z: np.ndarray, problem: StepProblem) -> float:
        grid, params = problem.grid, problem.params
        Gamma = params.gamma_tensor
        value = float(np.sum(chemical_density(c, params)))
        side_total = 0.0
        for side in grid.sides:
            gc = grid.side_gradient(c, side)
            side_total += 0.5 * float(np.sum(np.einsum("kd...,kdle,le...->...", gc, Gamma, gc)))
            J = grid.displacement_gradient(u, side, problem.boundary)
            side_total += float(np.sum(ElasticTerms(sym_part(J), c, z, params).density))
        return (value + side_total / len(grid.sides)) * grid.cell_volume

    def solve(self, problem: StepProblem, u: np.ndarray, c: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Minimise over c on the simplex (and at fixed mass in Cahn-Hilliard mode).

        Args:
            problem: The step problem
            u: Displacement (fixed)
            c: Initial guess
            z: Damage (fixed)

        Returns:
            The minimising concentration
        """
        if problem.tau is None:
            raise ValueError("the concentration block needs a time step")
        grid, params, tau = problem.grid, problem.params, problem.tau
        N, h = params.n_components, grid.cell_volume
        Q, Mq, B, weights = self._setup(problem)
        K = B.shape[1]
        c_prev = problem.c_prev.reshape(N, -1)
        shape = problem.c_prev.shape
        eps = params.epsilon
        J = np.kron(Q, B)
        Gamma = params.gamma_tensor
        H_grad = gradient_hessian(grid, np.ascontiguousarray(Gamma.reshape(N * grid.dim, -1)).tobytes(), N)
        prox_hess = h / tau * (np.kron(Mq, np.diag(weights)) + eps * np.eye((N - 1) * K))

        def to_field(y: np.ndarray) -> np.ndarray:
            return (c_prev + Q @ y.reshape(N - 1, K) @ B.T).reshape(shape)

        def objective(y: np.ndarray) -> float:
            Y = y.reshape(N - 1, K)
            prox = float(np.sum((Mq @ Y) * Y * weights)) + eps * float(np.sum(Y * Y))
            return self._energy(to_field(y), u, z, problem) + 0.5 * h / tau * prox

        def jacobian(y: np.ndarray) -> np.ndarray:
            Y = y.reshape(N - 1, K)
            G = energy_gradient_c(u, to_field(y), z, params, grid, problem.boundary).reshape(N, -1)
            prox = (Mq @ Y) * weights + eps * Y
            return (h * (Q.T @ G @ B) + h / tau * prox).reshape(-1)

        def hessian(y: np.ndarray) -> np.ndarray:
            cf = to_field(y)
            point = chemical_hess(cf, params)
            el = 0.0
            for side in grid.sides:
                Js = grid.displacement_gradient(u, side, problem.boundary)
                el = el + ElasticTerms(sym_part(Js), cf, z, params).d_cc
            point = point + el / len(grid.sides)
            full = H_grad + cellwise_block(point.reshape(N, N, -1)).toarray()
            return h * (J.T @ full @ J) + prox_hess

        y0 = (Q.T @ (c.reshape(N, -1) - c_prev) @ B).reshape(-1)
        target = 0.1 * problem.settings.tol
        result = minimize(
            objective,
            y0,
            method="trust-exact",
            jac=jacobian,
            hess=hessian,
            options={"gtol": target * np.sqrt(h), "maxiter": problem.settings.max_block_iterations},
        )
        y, grad, polish = self._polish(result.x, jacobian, hessian, target * np.sqrt(h))
        grad_norm = float(np.linalg.norm(grad)) / np.sqrt(h)
        self.record_call(
            "trust-exact",
            {"iterations": int(result.nit), "polish": polish, "residual": grad_norm, "status": result.message},
        )
        if grad_norm > problem.settings.tol:
            logger.error(f"{self.name}: {result.message} (residual {grad_norm:.3e})")
            raise SolverError(f"{self.name} block did not converge: {result.message}", grad_norm, int(result.nit))
        return to_field(y)

    def _polish(self, y, jacobian, hessian, gtol: float, max_steps: int = 8):
        """Newton steps accepted on the gradient norm alone.

        Near the minimiser objective differences are below rounding, where
        trust-exact stops short of ``gtol``. Steps continue while the reduced
        Hessian is positive definite and the gradient shrinks.
        """
        grad = jacobian(y)
        steps = 0
        while steps < max_steps and float(np.linalg.norm(grad)) > gtol:
            try:
                factor = scipy.linalg.cho_factor(hessian(y))
            except np.linalg.LinAlgError:
                break
            trial = y - scipy.linalg.cho_solve(factor, grad)
            trial_grad = jacobian(trial)
            if not np.linalg.norm(trial_grad) < np.linalg.norm(grad):
                break
            y, grad = trial, trial_grad
            steps += 1
        return y, grad, steps

    def residual(self, problem: StepProblem, u: np.ndarray, c: np.ndarray, z: np.ndarray) -> float:
        return l2_norm(concentration_residual(problem, u, c, z), problem.grid)


def concentration_residual(problem: StepProblem, u: np.ndarray, c: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Residual field of the concentration stationarity condition.

    ``P[dE/dc + eps dc/tau] + S^-1(dc/tau)``, with its componentwise mean
    removed in Cahn-Hilliard mode (the Lagrange multiplier absorbs it).
    """
    grid, params, tau = problem.grid, problem.params, problem.tau
    rate = (c - problem.c_prev) / tau
    field = project(energy_gradient_c(u, c, z, params, grid, problem.boundary) + params.epsilon * rate)
    field = field + solve_S_inverse(project(rate), problem.mode, grid, params.mobility, tol=problem.settings.cg_tol)
    if DiffusionMode(problem.mode) is DiffusionMode.CAHN_HILLIARD:
        axes = tuple(range(1, field.ndim))
        field = field - field.mean(axis=axes, keepdims=True)
    return field
