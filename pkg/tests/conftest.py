"""Shared fixtures: small reference geometries and parameter sets."""

import numpy as np
import pytest

from sulfation2d.discretization import ModelParams
from sulfation2d.geometry import CartesianGrid, LevelSetField, ProblemGeometry
from sulfation2d.harness import circle_level_set, square_circles_level_set


def build_geometry(level_set, n):
    grid = CartesianGrid(2.0, n)
    return ProblemGeometry.build(grid, level_set)


@pytest.fixture(scope="session")
def circle_geom_16():
    return build_geometry(circle_level_set, 16)


@pytest.fixture(scope="session")
def circle_geom_32():
    return build_geometry(circle_level_set, 32)


@pytest.fixture(scope="session")
def circle_geom_64():
    return build_geometry(circle_level_set, 64)


@pytest.fixture(scope="session")
def squares_geom_16():
    return build_geometry(square_circles_level_set, 16)


@pytest.fixture
def physical_params():
    return ModelParams(a=1.0e4, d=0.1, m_s=64.06, m_c=100.09,
                       alpha=0.01, beta=0.1, s_b=1.0)


def random_state(geom, rng, t=0.3):
    """A physically plausible random iterate on the active nodes."""
    from sulfation2d.discretization import State

    n = geom.n_active
    return State(rng.uniform(0.0, 2.0, n), rng.uniform(0.5, 10.0, n), t)
