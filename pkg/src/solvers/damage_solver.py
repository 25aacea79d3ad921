"""
Damage block: the obstacle problem ``0 <= z <= z_prev``.

The objective (u and c frozen) is

    int 1/2 |grad z|^2 + eps/p |grad z|^p + (Phi(z) + eta) W_hat
        - alpha (z - z_prev) + beta / (2 tau) (z - z_prev)^2 dx

which is convex for Phi(z) = z^q, q >= 2. It is minimised by projected Newton
with an active set and an Armijo search along the projection arc.
"""
from typing import List, Tuple
import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from ..model.energy import ElasticTerms, damage_flux, degradation, degradation_prime, degradation_second, sym_part
from ..model.errors import ConstraintViolation, SolverError
from .base_solver import BaseSolver, StepProblem, cellwise_block, l2_norm

logger = logging.getLogger(__name__)


def stored_energy_density(problem: StepProblem, u: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Undegraded elastic energy ``W_hat`` averaged over the side combinations."""
    grid = problem.grid
    ones = np.ones(grid.cells)
    total = np.zeros(grid.cells)
    for side in grid.sides:
        J = grid.displacement_gradient(u, side, problem.boundary)
        total += ElasticTerms(sym_part(J), c, ones, problem.params).w_hat
    return total / len(grid.sides)


class DamageSolver(BaseSolver):
    """Projected Newton solver for the damage obstacle problem."""

    block = "z"

    def __init__(self, name: str = "Damage"):
        super().__init__(name)

    def _parts(self, problem: StepProblem, z: np.ndarray, w_hat: np.ndarray) -> Tuple[float, np.ndarray]:
        """Objective (per unit cell volume) and its L2 gradient."""
        grid, params, tau = problem.grid, problem.params, problem.tau
        dz = z - problem.z_prev
        value = float(np.sum((degradation(z, params) + params.eta_floor) * w_hat - params.alpha * dz + 0.5 * params.beta / tau * dz * dz))
        grad = degradation_prime(z, params) * w_hat - params.alpha + params.beta / tau * dz
        nsides = len(grid.sides)
        for side in grid.sides:
            gz = grid.side_gradient(z, side)
            g2 = np.sum(gz * gz, axis=0)
            dens = 0.5 * g2
            if params.epsilon > 0:
                dens = dens + params.epsilon / params.p * np.power(g2, params.p / 2.0)
            value += float(np.sum(dens)) / nsides
            grad = grad + grid.side_gradient_adjoint(damage_flux(gz, params), side) / nsides
        return value, grad

    def _hessian(self, problem: StepProblem, z: np.ndarray, w_hat: np.ndarray) -> sp.csr_matrix:
        grid, params = problem.grid, problem.params
        n, m = grid.dim, grid.n_cells
        diag = degradation_second(z, params) * w_hat + params.beta / problem.tau
        hess = sp.diags(diag.reshape(-1))
        for side in grid.sides:
            G = grid.scalar_gradient_operator(side)
            gz = grid.side_gradient(z, side)
            H = np.einsum("ab,...->ab...", np.eye(n), np.ones(grid.cells))
            if params.epsilon > 0:
                g2 = np.sum(gz * gz, axis=0)
                scale = np.power(g2, params.p / 2.0 - 1.0)
                unit = np.divide(gz, np.sqrt(g2), out=np.zeros_like(gz), where=g2 > 0)
                H = H + params.epsilon * (
                    np.einsum("ab,...->ab...", np.eye(n), scale)
                    + (params.p - 2.0) * scale * np.einsum("a...,b...->ab...", unit, unit)
                )
            hess = hess + G.T @ cellwise_block(H.reshape(n, n, m)) @ G / len(grid.sides)
        return sp.csr_matrix(hess)

    def solve(self, problem: StepProblem, u: np.ndarray, c: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Minimise over z in the box ``[0, z_prev]``.

        Args:
            problem: The step problem
            u: Displacement (fixed)
            c: Concentration (fixed)
            z: Initial guess

        Returns:
            The minimising damage field
        """
        if problem.tau is None:
            raise ValueError("the damage block needs a time step")
        upper = problem.z_prev
        if upper.min() < 0:
            raise ConstraintViolation(f"infeasible obstacle: previous damage has minimum {upper.min():.3e}")
        settings = problem.settings
        tol = 0.1 * settings.tol
        w_hat = stored_energy_density(problem, u, c)
        z = np.clip(np.asarray(z, dtype=float), 0.0, upper)
        value, grad = self._parts(problem, z, w_hat)
        residuals: List[float] = []
        stalled = False
        for iteration in range(settings.max_block_iterations + 1):
            res = projected_gradient_norm(z, grad, upper, problem)
            residuals.append(res)
            if res <= tol:
                break
            if iteration == settings.max_block_iterations:
                logger.error(f"{self.name}: no convergence, residual {res:.3e}")
                raise SolverError(f"{self.name} block did not converge", res, iteration)
            # Active set: bound constraints that the gradient pushes against
            gap = 1e-12 + 1e-8 * res
            active = ((z <= gap) & (grad > 0)) | ((z >= upper - gap) & (grad < 0))
            free = ~active.reshape(-1)
            direction = -grad.reshape(-1).copy()
            if np.any(free):
                H = self._hessian(problem, z, w_hat)
                H_ff = sp.csc_matrix(H[free][:, free])
                direction[free] = spsolve(H_ff, -grad.reshape(-1)[free])
            direction[~free] = 0.0
            direction = direction.reshape(z.shape)
            t = 1.0
            full_step = None
            while t >= 1e-12:
                trial = np.clip(z + t * direction, 0.0, upper)
                trial_value, trial_grad = self._parts(problem, trial, w_hat)
                if full_step is None:
                    full_step = (trial, trial_value, trial_grad)
                decrease = float(np.sum(grad * (trial - z)))
                if trial_value <= value + 1e-4 * decrease:
                    break
                t *= 0.5
            else:
                # no sufficient decrease: the full step is taken only if the objective moves by rounding alone
                trial, trial_value, trial_grad = full_step
                rounding = 1e-14 * max(1.0, abs(value))
                if trial_value > value + rounding or projected_gradient_norm(trial, trial_grad, upper, problem) >= res:
                    logger.warning(f"{self.name}: line search stalled at residual {res:.3e}")
                    stalled = True
                    break
            z, value, grad = trial, trial_value, trial_grad
            logger.debug(f"{self.name}: iteration {iteration} residual {res:.3e} active {int(active.sum())}")
        self.record_call(
            "projected-newton",
            {
                "iterations": len(residuals) - 1,
                "residual": residuals[-1],
                "active": int(np.sum((z <= 0) | (z >= upper))),
                "stalled": stalled,
            },
        )
        return z

    def residual(self, problem: StepProblem, u: np.ndarray, c: np.ndarray, z: np.ndarray) -> float:
        _, grad = self._parts(problem, z, stored_energy_density(problem, u, c))
        return projected_gradient_norm(z, grad, problem.z_prev, problem)


def projected_gradient_norm(z: np.ndarray, grad: np.ndarray, upper: np.ndarray, problem: StepProblem) -> float:
    """L2 norm of ``z - clip(z - grad, 0, upper)``; zero exactly at box-constrained stationary points."""
    return l2_norm(z - np.clip(z - grad, 0.0, upper), problem.grid)
