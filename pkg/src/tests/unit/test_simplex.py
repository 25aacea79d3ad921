"""
Unit tests for the simplex algebra, the diffusion operator and its inverse.
"""
import pytest
import numpy as np
import sys
import os
from types import SimpleNamespace
from hypothesis import given, settings, strategies as st

# Add the project root to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

from src.model.energy import MaterialParams, concentration_force
from src.model.errors import ConstraintViolation, ModeError
from src.model.grid import BoundaryData, make_grid, mean
from src.model.simplex import (
    DiffusionMode,
    apply_S,
    inner_X,
    lagrange_multiplier,
    mobility_pinv,
    project,
    projection_matrix,
    solve_S_inverse,
    tangent_basis,
    validate_mobility,
)

TWO_PHASE_M = np.array([[1.0, -1.0], [-1.0, 1.0]])


def _discrete_eigenvalue(grid):
    h = grid.spacing[0]
    return 4.0 * np.sin(np.pi * h / 2.0) ** 2 / h**2


def _admissible(rng, grid, N, mode):
    f = project(rng.standard_normal((N,) + grid.cells))
    if mode is DiffusionMode.CAHN_HILLIARD:
        f = f - f.mean(axis=tuple(range(1, f.ndim)), keepdims=True)
    return f


@given(N=st.integers(2, 7))
def test_projection_matrix_properties(N):
    """Test that P is a symmetric idempotent with the constants in its kernel."""
    P = projection_matrix(N)
    assert np.allclose(P, P.T)
    assert np.allclose(P @ P, P)
    assert np.allclose(P @ np.ones(N), 0.0)
    assert np.isclose(np.trace(P), N - 1)


def test_projection_matrix_needs_two_components():
    """Test that a single component is rejected."""
    with pytest.raises(ValueError):
        projection_matrix(1)


@given(N=st.integers(2, 7))
def test_tangent_basis_is_orthonormal(N):
    """Test that the tangent basis is orthonormal and orthogonal to the constants."""
    Q = tangent_basis(N)
    assert Q.shape == (N, N - 1)
    assert np.allclose(Q.T @ Q, np.eye(N - 1))
    assert np.allclose(np.ones(N) @ Q, 0.0)


def test_validate_mobility_accepts_scaled_projection():
    """Test that M = N P passes with the expected tangent eigenvalues."""
    report = validate_mobility(3 * projection_matrix(3))
    assert report.passed
    assert np.allclose(report.tangent_eigenvalues, [3.0, 3.0])


@pytest.mark.parametrize(
    "M, message",
    [
        (np.array([[1.0, -1.0], [-0.5, 0.5]]), "symmetric"),
        (np.array([[1.0, 0.0], [0.0, 1.0]]), "row sums"),
        (np.zeros((2, 2)), "positive definite"),
        (np.ones(3), "square"),
    ],
)
def test_validate_mobility_reports_violations(M, message):
    """Test that each violated property is named in the report."""
    report = validate_mobility(M)
    assert not report.passed
    assert any(message in v for v in report.violations)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), N=st.integers(2, 5))
def test_random_valid_mobility_passes(seed, N):
    """Test that Q D Q^T with a positive diagonal D is always a valid mobility."""
    gen = np.random.default_rng(seed)
    Q = tangent_basis(N)
    B = gen.standard_normal((N - 1, N - 1))
    M = Q @ (B @ B.T + 0.1 * np.eye(N - 1)) @ Q.T
    assert validate_mobility(M).passed
    pinv = mobility_pinv(M)
    assert np.allclose(pinv @ M, projection_matrix(N), atol=1e-8)


def test_inner_X_allen_cahn_example():
    """Test the Allen-Cahn product of a constant tangent field: int M^+ v . v."""
    grid = make_grid(1, [8], [1.0])
    v = np.stack([np.full(8, 0.5), np.full(8, -0.5)])
    assert inner_X(v, v, DiffusionMode.ALLEN_CAHN, grid, TWO_PHASE_M) == pytest.approx(0.25, abs=1e-14)
    assert inner_X(v, np.zeros_like(v), DiffusionMode.ALLEN_CAHN, grid, TWO_PHASE_M) == 0.0


def test_inner_X_cahn_hilliard_eigenfunction():
    """Test the Cahn-Hilliard product of cos(pi x)(1, -1) against its closed forms."""
    grid = make_grid(1, [64], [1.0])
    x = grid.centers()[0]
    v = np.stack([np.cos(np.pi * x), -np.cos(np.pi * x)])
    value = inner_X(v, v, DiffusionMode.CAHN_HILLIARD, grid, TWO_PHASE_M)
    assert value == pytest.approx(1.0 / (2.0 * _discrete_eigenvalue(grid)), rel=1e-10)
    assert value == pytest.approx(1.0 / (2.0 * np.pi**2), rel=1e-3)


def test_inner_X_symmetric_and_nonnegative(rng):
    """Test symmetry and positivity of the X product on admissible fields."""
    grid = make_grid(1, [12], [1.0])
    M = 3 * projection_matrix(3)
    for mode in DiffusionMode:
        a = _admissible(rng, grid, 3, mode)
        b = _admissible(rng, grid, 3, mode)
        assert inner_X(a, b, mode, grid, M) == pytest.approx(inner_X(b, a, mode, grid, M), rel=1e-9)
        assert inner_X(a, a, mode, grid, M) > 0


def test_inner_X_rejects_nonzero_mean_in_cahn_hilliard():
    """Test that Cahn-Hilliard mode needs zero-mean input."""
    grid = make_grid(1, [8], [1.0])
    v = np.stack([np.full(8, 0.5), np.full(8, -0.5)])
    with pytest.raises(ConstraintViolation):
        inner_X(v, v, DiffusionMode.CAHN_HILLIARD, grid, TWO_PHASE_M)


def test_apply_S_eigenfunction():
    """Test S on cos(pi x)(1, -1): 2 lambda_h times the input, close to 2 pi^2."""
    grid = make_grid(1, [64], [1.0])
    x = grid.centers()[0]
    f = np.stack([np.cos(np.pi * x), -np.cos(np.pi * x)])
    out = apply_S(f, DiffusionMode.CAHN_HILLIARD, grid, TWO_PHASE_M)
    assert np.allclose(out, 2.0 * _discrete_eigenvalue(grid) * f, atol=1e-9)
    assert np.max(np.abs(out - 2.0 * np.pi**2 * f)) < 2e-2


@pytest.mark.parametrize("cells", [8, 16, 32])
@pytest.mark.parametrize("mode", list(DiffusionMode))
def test_S_inverse_undoes_S(cells, mode, rng):
    """Test that S^-1 S is the identity on admissible fields."""
    grid = make_grid(1, [cells], [1.0])
    M = 3 * projection_matrix(3)
    f = _admissible(rng, grid, 3, mode)
    back = solve_S_inverse(apply_S(f, mode, grid, M), mode, grid, M, tol=1e-13)
    assert np.max(np.abs(back - f)) < 1e-9


def test_S_inverse_undoes_S_in_2d(rng):
    """Test the inversion on a rectangle."""
    grid = make_grid(2, [6, 9], [1.0, 1.5])
    M = 2 * projection_matrix(2)
    f = _admissible(rng, grid, 2, DiffusionMode.CAHN_HILLIARD)
    back = solve_S_inverse(apply_S(f, DiffusionMode.CAHN_HILLIARD, grid, M), DiffusionMode.CAHN_HILLIARD, grid, M, tol=1e-13)
    assert np.max(np.abs(back - f)) < 1e-9


def test_S_inverse_eigenfunction_converges_second_order():
    """Test that the inverse of cos(pi x)(1, -1) approaches cos(pi x)/(2 pi^2)(1, -1) at order 2."""
    errors = []
    for cells in (8, 16, 32):
        grid = make_grid(1, [cells], [1.0])
        x = grid.centers()[0]
        f = np.stack([np.cos(np.pi * x), -np.cos(np.pi * x)])
        v = solve_S_inverse(f, DiffusionMode.CAHN_HILLIARD, grid, TWO_PHASE_M, tol=1e-13)
        errors.append(np.max(np.abs(v - f / (2.0 * np.pi**2))))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.9)


def test_S_inverse_rejects_inadmissible_input():
    """Test the tangent and zero-mean preconditions."""
    grid = make_grid(1, [8], [1.0])
    with pytest.raises(ConstraintViolation):
        solve_S_inverse(np.ones((2, 8)), DiffusionMode.ALLEN_CAHN, grid, TWO_PHASE_M)
    with pytest.raises(ConstraintViolation):
        solve_S_inverse(np.stack([np.ones(8), -np.ones(8)]), DiffusionMode.CAHN_HILLIARD, grid, TWO_PHASE_M)


def test_lagrange_multiplier_is_mean_force(grid1d, params1d, random_state):
    """Test that the multiplier is the spatial mean of W^ch_c + W^el_c."""
    u, c, z, boundary = random_state(grid1d, 2)
    state = SimpleNamespace(u=u, c=c, z=z, boundary=boundary)
    lam = lagrange_multiplier(state, params1d, grid1d)
    expected = mean(concentration_force(u, c, z, params1d, grid1d, boundary), grid1d)
    assert np.allclose(lam, expected)
    with pytest.raises(ModeError):
        lagrange_multiplier(state, params1d, grid1d, DiffusionMode.ALLEN_CAHN)


def test_lagrange_multiplier_vanishes_for_symmetric_state():
    """Test that a uniform 50/50 mixture without load has a zero multiplier."""
    grid = make_grid(1, [8], [1.0], [True, True])
    params = MaterialParams.default(1, 2)
    state = SimpleNamespace(
        u=np.zeros((1, 8)), c=np.full((2, 8), 0.5), z=np.ones(8), boundary=BoundaryData.constant(grid)
    )
    assert np.allclose(lagrange_multiplier(state, params, grid), 0.0, atol=1e-13)
