# conftest.py

import numpy as np
import pytest

from discretization import GreenSolver, SourceSpec, build_grid, solve_background
from forward_series import Susceptibility


def bump(grid, amplitude, center=0.5, width=0.05):
    """Smooth bump vanishing on the boundary nodes."""
    x = grid.coordinates[:, 0]
    values = amplitude * np.exp(-((x - center) ** 2) / (2.0 * width ** 2))
    values[grid.boundary] = 0.0
    return values


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid_1d():
    return build_grid("interval", 33)


@pytest.fixture(scope="session")
def solver_1d(grid_1d):
    return GreenSolver(grid_1d, 1.0)


@pytest.fixture(scope="session")
def background_1d(grid_1d, solver_1d):
    return solve_background(grid_1d, SourceSpec(location=(0.0,), scale=1.0, k=1.0), solver_1d)


@pytest.fixture(scope="session")
def grid_disk():
    return build_grid("disk", 16)


@pytest.fixture
def small_zeta(grid_1d):
    return Susceptibility(bump(grid_1d, 0.05), bump(grid_1d, 0.03, center=0.45))
