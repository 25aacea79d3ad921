import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../../')))

import numpy as np
import pytest

from src.model.energy import MaterialParams
from src.model.grid import BoundaryData, make_grid


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long simulation runs (50-step runs, refinement families)")


@pytest.fixture
def grid1d():
    """Unit interval, 16 cells, clamped at both ends."""
    return make_grid(1, [16], [1.0], {"x-": True, "x+": True})


@pytest.fixture
def grid2d():
    """Small rectangle clamped on the left face."""
    return make_grid(2, [6, 5], [1.0, 0.8], {"x-": True})


@pytest.fixture
def params1d():
    """Two phases with an eigenstrain mismatch."""
    return MaterialParams.default(1, 2, eigenstrain=np.array([[[0.0]], [[0.1]]]), gamma=0.05, well_height=0.5)


@pytest.fixture
def params2d():
    """Three phases in 2D with different isotropic eigenstrains."""
    eig = np.stack([0.0 * np.eye(2), 0.05 * np.eye(2), np.array([[0.02, 0.01], [0.01, -0.02]])])
    return MaterialParams.default(2, 3, eigenstrain=eig, gamma=0.1, epsilon=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_state(rng):
    """Factory of random admissible (u, c, z, boundary) on a grid."""

    def make(grid, n_components, c_range=(0.2, 0.8), z_range=(0.2, 0.8)):
        u = 0.05 * rng.standard_normal((grid.dim,) + grid.cells)
        weights = rng.uniform(*c_range, (n_components,) + grid.cells)
        c = weights / weights.sum(axis=0, keepdims=True)
        z = rng.uniform(*z_range, grid.cells)
        vectors = {face: 0.02 * rng.standard_normal(grid.dim) for face in grid.dirichlet_faces}
        return u, c, z, BoundaryData.constant(grid, vectors)

    return make
