"""Shared fixtures.

The expensive objects (velocity grids, collision models, dense matrices)
are session-scoped: every module reuses the same instances, so the suite
pays the K-matrix build once per grid size.

Grid naming: `model12` is the 12-per-axis production-resolution model used
by the acceptance tests; `model6`/`model8` are desk-sized models for unit
tests.  All use hard spheres (gamma = 1, b = 1) unless the test needs
otherwise.
"""

import numpy as np
import pytest

from boltzbox.fields import ball_grid, slab_grid
from boltzbox.kernels import CollisionModel, VelocityGrid


@pytest.fixture(scope="session")
def vgrid6():
    return VelocityGrid(6, 6.0)


@pytest.fixture(scope="session")
def vgrid8():
    return VelocityGrid(8, 6.0)


@pytest.fixture(scope="session")
def vgrid12():
    return VelocityGrid(12, 6.0)


@pytest.fixture(scope="session")
def model6(vgrid6):
    """Small hard-sphere model, cheap rule, order-1 interpolation."""
    return CollisionModel(vgrid6, gamma=1.0, n_polar=2, n_azimuth=4,
                          interp_order=1)


@pytest.fixture(scope="session")
def model8(vgrid8):
    return CollisionModel(vgrid8, gamma=1.0, n_polar=3, n_azimuth=6,
                          interp_order=1)


@pytest.fixture(scope="session")
def model12(vgrid12):
    """Production-resolution model: 12^3 lattice, GL8 x 8 sphere rule,
    order-2 interpolation.  Shared across the acceptance criteria."""
    return CollisionModel(vgrid12, gamma=1.0, n_polar=8, n_azimuth=8,
                          interp_order=2)


@pytest.fixture(scope="session")
def slab8(vgrid6):
    return slab_grid(vgrid6, 8)


@pytest.fixture(scope="session")
def ball6(vgrid6):
    return ball_grid(vgrid6, 6, radius=1.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(2024)
