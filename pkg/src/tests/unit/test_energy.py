"""
Unit tests for the energy densities, their derivatives and the total energy.
"""
import pytest
import numpy as np
import sys
import os
from hypothesis import given, settings, strategies as st

# Add the project root to the Python path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '../..')))

from src.model.energy import (
    EnergyLedger,
    MaterialParams,
    check_assumptions,
    chem_log_delta,
    chem_log_delta_grad,
    chem_poly,
    chem_poly_grad,
    dissipation_R,
    elastic_d_c,
    elastic_d_e,
    elastic_d_z,
    elastic_density,
    energy_gradient_c,
    energy_gradient_u,
    energy_gradient_z,
    isotropic_stiffness,
    log_density_minimum,
    phi_delta,
    phi_delta_prime,
    stiffness_eigenvalues,
    total_energy,
)
from src.model.errors import ConfigError, ConstraintViolation
from src.model.grid import BoundaryData, make_grid

FD_STEP = 1e-5


def _log_params(dim=1, N=2, delta=0.1, **overrides):
    A = 0.8 * (np.ones((N, N)) - np.eye(N))
    return MaterialParams.default(dim, N, chemical="log", theta=0.4, interaction=A, delta=delta, **overrides)


@pytest.mark.parametrize("delta", [1e-1, 1e-2, 1e-3])
def test_phi_delta_is_C1_at_the_junction(delta):
    """Test continuity of the value and first derivative where the branches meet."""
    below = np.nextafter(delta, 0.0)
    assert abs(phi_delta(delta, delta) - phi_delta(below, delta)) < 1e-14
    assert abs(phi_delta_prime(delta, delta) - phi_delta_prime(below, delta)) < 1e-14
    assert phi_delta(delta, delta) == pytest.approx(delta * np.log(delta), abs=1e-16)
    assert phi_delta_prime(delta, delta) == pytest.approx(np.log(delta) + 1.0, abs=1e-14)


def test_phi_delta_quadratic_branch():
    """Test the extension below delta against its closed form."""
    delta = 0.1
    x = np.array([-0.5, 0.0, 0.05])
    expected = x * np.log(delta) - delta / 2 + x * x / (2 * delta)
    assert np.allclose(phi_delta(x, delta), expected)


def test_phi_delta_rejects_nonpositive_delta():
    """Test that delta <= 0 is refused."""
    with pytest.raises(ConstraintViolation):
        phi_delta(0.5, 0.0)


@pytest.mark.parametrize("delta", [1e-1, 1e-2, 1e-3])
def test_phi_delta_secant_convexity(delta, rng):
    """Test convexity with 1000 random secants."""
    a = rng.uniform(-1.0, 2.0, 1000)
    b = rng.uniform(-1.0, 2.0, 1000)
    t = rng.uniform(0.0, 1.0, 1000)
    mid = phi_delta(t * a + (1 - t) * b, delta)
    chord = t * phi_delta(a, delta) + (1 - t) * phi_delta(b, delta)
    assert np.all(mid <= chord + 1e-12)


def test_log_density_bounded_below_uniformly_in_delta():
    """Test that the sampled minimum of the regularised log density stays bounded as delta shrinks."""
    params = _log_params()
    minima = log_density_minimum(params, [1e-1, 1e-2, 1e-3], count=100_000)
    assert set(minima) == {1e-1, 1e-2, 1e-3}
    # theta * N * min(x log x) plus the interaction floor
    floor = -params.theta * 2 / np.e - 0.8
    assert all(v > floor for v in minima.values())


def test_chem_poly_examples():
    """Test the multi-well density at a vertex and at the barycentre."""
    assert chem_poly(np.array([1.0, 0.0])) == 0.0
    assert chem_poly(np.array([0.5, 0.5]), height=2.0) == pytest.approx(0.25)
    assert np.allclose(chem_poly_grad(np.array([0.5, 0.5])), 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_chemical_gradients_match_finite_differences(seed):
    """Test the pointwise chemical gradients of both densities."""
    gen = np.random.default_rng(seed)
    c = gen.uniform(0.15, 0.9, (3, 5))
    d = gen.standard_normal((3, 5))
    params = _log_params(N=3)
    for f, g in (
        (lambda x: chem_poly(x, 0.7), lambda x: chem_poly_grad(x, 0.7)),
        (lambda x: chem_log_delta(x, params), lambda x: chem_log_delta_grad(x, params)),
    ):
        fd = (f(c + FD_STEP * d) - f(c - FD_STEP * d)) / (2 * FD_STEP)
        exact = np.sum(g(c) * d, axis=0)
        assert np.allclose(fd, exact, rtol=1e-6, atol=1e-9)


def test_elastic_derivatives_match_finite_differences(params2d, rng):
    """Test the strain, concentration and damage derivatives of W^el pointwise."""
    count = 7
    e = rng.standard_normal((2, 2, count)) * 0.1
    e = 0.5 * (e + np.swapaxes(e, 0, 1))
    w = rng.uniform(0.2, 0.8, (3, count))
    c = w / w.sum(axis=0)
    z = rng.uniform(0.2, 0.8, count)
    de = rng.standard_normal((2, 2, count))
    de = 0.5 * (de + np.swapaxes(de, 0, 1))
    dc = rng.standard_normal((3, count))
    dz = rng.standard_normal(count)

    def fd(fun):
        return (fun(FD_STEP) - fun(-FD_STEP)) / (2 * FD_STEP)

    base = dict(e=e, c=c, z=z)
    pairs = [
        (lambda s: elastic_density(e + s * de, c, z, params2d), np.einsum("ab...,ab...->...", elastic_d_e(**base, params=params2d), de)),
        (lambda s: elastic_density(e, c + s * dc, z, params2d), np.sum(elastic_d_c(**base, params=params2d) * dc, axis=0)),
        (lambda s: elastic_density(e, c, z + s * dz, params2d), elastic_d_z(**base, params=params2d) * dz),
    ]
    for fun, exact in pairs:
        assert np.allclose(fd(fun), exact, rtol=1e-6, atol=1e-10)


def test_elastic_density_vanishes_at_eigenstrain(params2d):
    """Test that W^el is zero when the strain equals the mixture eigenstrain."""
    c = np.array([0.2, 0.5, 0.3])
    e = np.einsum("k,kab->ab", c, params2d.eigenstrain)
    assert elastic_density(e, c, np.array(0.7), params2d) == pytest.approx(0.0, abs=1e-16)
    assert np.allclose(elastic_d_e(e, c, np.array(0.7), params2d), 0.0)


@pytest.mark.parametrize("epsilon", [0.0, 0.1])
@pytest.mark.parametrize("chemical", ["poly", "log"])
def test_total_energy_gradients_match_finite_differences(epsilon, chemical, random_state):
    """Test the L2 gradients of E in u, c and z along random directions on 20 random states."""
    grid = make_grid(1, [16], [1.0], [True, True])
    eig = np.array([[[0.0]], [[0.1]]])
    if chemical == "log":
        params = _log_params(eigenstrain=eig, epsilon=epsilon, gamma=0.05)
    else:
        params = MaterialParams.default(1, 2, eigenstrain=eig, epsilon=epsilon, gamma=0.05, well_height=0.5)
    gen = np.random.default_rng(7)
    h = grid.cell_volume
    for _ in range(20):
        u, c, z, boundary = random_state(grid, 2)
        du = gen.standard_normal(u.shape)
        dc = gen.standard_normal(c.shape)
        dz = 0.1 * gen.standard_normal(z.shape)

        def E(uu, cc, zz):
            return total_energy(uu, cc, zz, params, grid, boundary).total

        checks = [
            ((E(u + FD_STEP * du, c, z) - E(u - FD_STEP * du, c, z)) / (2 * FD_STEP), h * np.sum(energy_gradient_u(u, c, z, params, grid, boundary) * du)),
            ((E(u, c + FD_STEP * dc, z) - E(u, c - FD_STEP * dc, z)) / (2 * FD_STEP), h * np.sum(energy_gradient_c(u, c, z, params, grid, boundary) * dc)),
            ((E(u, c, z + FD_STEP * dz) - E(u, c, z - FD_STEP * dz)) / (2 * FD_STEP), h * np.sum(energy_gradient_z(u, c, z, params, grid, boundary) * dz)),
        ]
        for fd, exact in checks:
            assert fd == pytest.approx(exact, rel=1e-6, abs=1e-10)


def test_total_energy_zero_for_unloaded_pure_phase():
    """Test that a pure phase without load or eigenstrain has zero energy."""
    grid = make_grid(2, [4, 3], [1.0, 1.0], {"x-": True})
    params = MaterialParams.default(2, 2)
    c = np.stack([np.ones(grid.cells), np.zeros(grid.cells)])
    ledger = total_energy(np.zeros((2,) + grid.cells), c, np.ones(grid.cells), params, grid, BoundaryData.constant(grid))
    assert ledger.total == pytest.approx(0.0, abs=1e-15)


def test_total_energy_uniform_strain_1d():
    """Test the elastic energy of a uniformly stretched bar: (1 + eta) * E * s^2 / 2 * length."""
    grid = make_grid(1, [8], [2.0], [True, True])
    params = MaterialParams.default(1, 2, eta_floor=0.01)
    s = 0.1
    u = (s * grid.centers()[0]).reshape(1, 8)
    boundary = BoundaryData.constant(grid, {"x+": [2.0 * s]})
    c = np.stack([np.ones(8), np.zeros(8)])
    ledger = total_energy(u, c, np.ones(8), params, grid, boundary)
    assert ledger.elastic == pytest.approx(1.01 * 0.5 * s * s * 2.0, rel=1e-12)
    assert ledger.gradient_c == 0.0
    assert ledger.reg_u == 0.0


def test_total_energy_rejects_damage_outside_unit_interval(grid1d, params1d, random_state):
    """Test the damage range check."""
    u, c, z, boundary = random_state(grid1d, 2)
    with pytest.raises(ConstraintViolation):
        total_energy(u, c, z + 1.0, params1d, grid1d, boundary)


def test_energy_ledger_total():
    """Test that the ledger total is the sum of its terms."""
    ledger = EnergyLedger(1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    assert ledger.total == 21.0
    assert ledger.as_dict()["total"] == 21.0


def test_dissipation_R():
    """Test the dissipation of a uniform rate and the healing prohibition."""
    grid = make_grid(1, [10], [1.0])
    params = MaterialParams.default(1, 2, alpha=2.0, beta=3.0)
    assert dissipation_R(-np.ones(10), params, grid) == pytest.approx(2.0 + 1.5)
    assert dissipation_R(np.zeros(10), params, grid) == 0.0
    with pytest.raises(ConstraintViolation):
        dissipation_R(np.full(10, 1e-3), params, grid)


def test_isotropic_stiffness_eigenvalues():
    """Test the Mandel eigenvalues 2 mu (twice) and 2 lam + 2 mu in 2D."""
    eig = stiffness_eigenvalues(isotropic_stiffness(2, 1.0, 1.0))
    assert np.allclose(np.sort(eig), [2.0, 2.0, 4.0])


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"mobility": np.array([[1.0, -1.0], [-0.5, 0.5]])}, "mobility"),
        ({"p": 1.0}, "p must satisfy"),
        ({"degradation_exponent": 1.0}, "degradation exponent"),
        ({"alpha": 0.0}, "alpha"),
        ({"stiffness": -np.ones((2, 1, 1, 1, 1))}, "not positive definite"),
        ({"chemical": "log", "delta": 0.5}, "delta"),
    ],
)
def test_material_params_validation(overrides, message):
    """Test that each invalid parameter is reported by ConfigError."""
    with pytest.raises(ConfigError) as info:
        MaterialParams.default(1, 2, **overrides)
    assert any(message in v for v in info.value.violations)


def test_material_params_replace_and_monotonicity(params2d):
    """Test replace and the monotonicity constant eta * min eig C."""
    changed = params2d.replace(alpha=5.0)
    assert changed.alpha == 5.0
    assert changed.gamma == params2d.gamma
    assert params2d.monotonicity_constant == pytest.approx(0.01 * 2.0)


def test_check_assumptions_default_parameters(params2d):
    """Test that the default material passes and the observed monotonicity exceeds eta."""
    report = check_assumptions(params2d)
    assert report.passed, report.violations
    assert report.constants["A3_observed"] >= report.constants["A3_eta"]
    assert report.constants["chemical_lower_bound"] >= 0.0
