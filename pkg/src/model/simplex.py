"""
Algebra of the concentration simplex: the projection P onto the tangent space,
mobility validation, the diffusion operator S, its inverse on the admissible
space, the X scalar product and the Cahn-Hilliard Lagrange multiplier.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, List, Optional
import logging

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import cg

from .errors import ConstraintViolation, ModeError, SolverError
from .grid import Grid, integrate, mean

logger = logging.getLogger(__name__)


class DiffusionMode(str, Enum):
    """Cahn-Hilliard (H^-1 flow, mass conserving) or Allen-Cahn (L2 flow)."""

    CAHN_HILLIARD = "cahn-hilliard"
    ALLEN_CAHN = "allen-cahn"


@dataclass
class MobilityReport:
    """Outcome of ``validate_mobility``.

    Attributes:
        passed: True iff every property holds within tolerance
        violations: One message per violated property
        tangent_eigenvalues: Eigenvalues of M restricted to the tangent space
    """

    passed: bool
    violations: List[str] = field(default_factory=list)
    tangent_eigenvalues: List[float] = field(default_factory=list)


def projection_matrix(N: int) -> np.ndarray:
    """Orthogonal projection of R^N onto TSigma = {x : sum x_k = 0}.

    Args:
        N: Number of components, at least 2

    Returns:
        ``I - ones ones^T / N``
    """
    if N < 2:
        raise ValueError(f"need at least 2 components, got {N}")
    return np.eye(N) - np.full((N, N), 1.0 / N)


def tangent_basis(N: int) -> np.ndarray:
    """Orthonormal basis of TSigma as the columns of an ``N x (N-1)`` matrix."""
    return scipy.linalg.null_space(np.ones((1, N)))


def project(c: np.ndarray) -> np.ndarray:
    """Apply P pointwise to a concentration-like field ``(N, ...)``."""
    return c - c.mean(axis=0, keepdims=True)


def validate_mobility(M: Any, tol: float = 1e-10) -> MobilityReport:
    """Check symmetry, zero row sums and definiteness on TSigma.

    Args:
        M: Candidate ``N x N`` mobility
        tol: Absolute tolerance for every check

    Returns:
        Report listing each violated property
    """
    M = np.asarray(M, dtype=float)
    violations: List[str] = []
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 2:
        return MobilityReport(False, [f"mobility must be square with N >= 2, got shape {M.shape}"])
    if not np.all(np.isfinite(M)):
        return MobilityReport(False, ["mobility has non-finite entries"])
    if np.max(np.abs(M - M.T)) > tol:
        violations.append("mobility is not symmetric")
    row_sums = M.sum(axis=1)
    if np.max(np.abs(row_sums)) > tol:
        violations.append(f"row sums must vanish, got {row_sums.tolist()}")
    Q = tangent_basis(M.shape[0])
    eig = np.linalg.eigvalsh(Q.T @ (0.5 * (M + M.T)) @ Q)
    if eig.min() <= tol:
        violations.append(f"mobility not positive definite on the tangent space (min eigenvalue {eig.min():.3e})")
    return MobilityReport(not violations, violations, eig.tolist())


def mobility_pinv(M: np.ndarray) -> np.ndarray:
    """Pseudo-inverse of M; maps TSigma onto itself for a valid mobility."""
    P = projection_matrix(M.shape[0])
    return P @ np.linalg.pinv(M) @ P


def _pointwise(matrix: np.ndarray, f: np.ndarray) -> np.ndarray:
    return np.einsum("kl,l...->k...", matrix, f)


def _check_tangent(f: np.ndarray, name: str) -> None:
    defect = np.max(np.abs(f.sum(axis=0))) if f.size else 0.0
    if defect > 1e-8 * max(1.0, float(np.max(np.abs(f)))):
        raise ConstraintViolation(f"{name} is not tangent to the simplex (max |sum_k| = {defect:.3e})")


def _check_zero_mean(f: np.ndarray, grid: Grid, name: str) -> None:
    m = np.atleast_1d(mean(f, grid))
    if np.max(np.abs(m)) > 1e-9 * max(1.0, float(np.max(np.abs(f)))):
        raise ConstraintViolation(f"{name} must have zero mean per component in Cahn-Hilliard mode, got {m.tolist()}")


def apply_S(f: np.ndarray, mode: DiffusionMode, grid: Grid, M: np.ndarray) -> np.ndarray:
    """Diffusion operator S as a field (Riesz representative in L2).

    Allen-Cahn: ``M f`` pointwise. Cahn-Hilliard: ``-div(M grad f)`` with
    homogeneous Neumann flux, so every component of the result has zero mean.

    Args:
        f: Field ``(N, *cells)``
        mode: Diffusion mode
        grid: The grid
        M: Mobility

    Returns:
        Field ``(N, *cells)``
    """
    M = np.asarray(M, dtype=float)
    f = grid.check_field(f, (M.shape[0],), "concentration field")
    if DiffusionMode(mode) is DiffusionMode.ALLEN_CAHN:
        return _pointwise(M, f)
    flat = f.reshape((M.shape[0], grid.n_cells))
    lap = (grid.laplacian() @ flat.T).T
    return _pointwise(M, lap).reshape(f.shape)


def solve_S_inverse(
    f: np.ndarray,
    mode: DiffusionMode,
    grid: Grid,
    M: np.ndarray,
    tol: float = 1e-10,
    maxiter: Optional[int] = None,
) -> np.ndarray:
    """Solve ``S v = f`` on the admissible space.

    Cahn-Hilliard: the Neumann Laplacian is inverted per component with conjugate
    gradients on the mean-zero subspace, then ``M^+`` is applied pointwise; the
    result is TSigma-valued with zero mean. Allen-Cahn: ``v = M^+ f`` pointwise.

    Args:
        f: Right-hand side ``(N, *cells)``, pointwise in TSigma
        mode: Diffusion mode
        grid: The grid
        M: Mobility
        tol: Relative residual tolerance of the CG iteration
        maxiter: CG iteration budget (default ``10 * n_cells``)

    Returns:
        The solution field
    """
    M = np.asarray(M, dtype=float)
    f = grid.check_field(f, (M.shape[0],), "right-hand side")
    _check_tangent(f, "right-hand side")
    pinv = mobility_pinv(M)
    if DiffusionMode(mode) is DiffusionMode.ALLEN_CAHN:
        return _pointwise(pinv, f)
    _check_zero_mean(f, grid, "right-hand side")
    L = grid.laplacian()
    budget = maxiter if maxiter is not None else 10 * grid.n_cells
    flat = f.reshape((M.shape[0], grid.n_cells))
    y = np.zeros_like(flat)
    for k, rhs in enumerate(flat):
        rhs = rhs - rhs.mean()
        if not np.any(rhs):
            continue
        sol, info = cg(L, rhs, rtol=tol, atol=0.0, maxiter=budget)
        if info != 0:
            residual = float(np.linalg.norm(L @ sol - rhs) / np.linalg.norm(rhs))
            logger.error(f"CG did not converge for component {k}: residual {residual:.3e}")
            raise SolverError(f"Neumann solve did not converge (component {k})", residual, budget)
        y[k] = sol - sol.mean()
    return _pointwise(pinv, y).reshape(f.shape)


def inner_X(
    v1: np.ndarray,
    v2: np.ndarray,
    mode: DiffusionMode,
    grid: Grid,
    M: np.ndarray,
    tol: float = 1e-12,
) -> float:
    """Scalar product of the proximal term, ``<S S^-1 v1, S^-1 v2> = int v1 . S^-1 v2``.

    In Cahn-Hilliard mode this is ``int M grad S^-1 v1 . grad S^-1 v2``; in
    Allen-Cahn mode it is ``int M^+ v1 . v2``, not ``int M v1 . v2``: with
    ``M = [[1, -1], [-1, 1]]`` and ``v = (1/2, -1/2)`` on the unit interval
    the product is 0.25.

    Args:
        v1: First argument ``(N, *cells)``, pointwise in TSigma
        v2: Second argument, same space
        mode: Diffusion mode
        grid: The grid
        M: Mobility
        tol: CG tolerance (Cahn-Hilliard)

    Returns:
        The scalar product
    """
    v1 = grid.check_field(v1, None, "first argument")
    if DiffusionMode(mode) is DiffusionMode.CAHN_HILLIARD:
        _check_zero_mean(v1, grid, "first argument")
    inv = solve_S_inverse(v2, mode, grid, M, tol=tol)
    return float(np.sum(integrate(v1 * inv, grid)))


def dual_pairing_S(w: np.ndarray, mode: DiffusionMode, grid: Grid, M: np.ndarray) -> float:
    """``<S w, w>``, the diffusive dissipation rate."""
    return float(np.sum(integrate(apply_S(w, mode, grid, M) * w, grid)))


def lagrange_multiplier(
    state: Any,
    params: Any,
    grid: Grid,
    mode: DiffusionMode = DiffusionMode.CAHN_HILLIARD,
) -> np.ndarray:
    """Mean over the domain of ``W^ch_{,c}(c) + W^el_{,c}(e(u), c, z)``.

    Args:
        state: Object with ``u``, ``c``, ``z`` and ``boundary`` attributes
        params: Material parameters
        grid: The grid
        mode: Must be Cahn-Hilliard

    Returns:
        N-vector (not projected)
    """
    if DiffusionMode(mode) is not DiffusionMode.CAHN_HILLIARD:
        raise ModeError("the Lagrange multiplier of the mass constraint only exists in Cahn-Hilliard mode")
    from .energy import concentration_force

    return np.atleast_1d(mean(concentration_force(state.u, state.c, state.z, params, grid, state.boundary), grid))
