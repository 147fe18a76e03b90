"""Grid, classification, ghost closures and level-set utilities."""

import math

import numpy as np
import pytest

from sulfation2d.errors import (AllInsideError, AllOutsideError,
                                EmptyImageError)
from sulfation2d.geometry import (CartesianGrid, LevelSetField,
                                  ProblemGeometry, classify, image_to_levelset,
                                  node_normal, project_to_boundary,
                                  reinitialize)
from sulfation2d.harness import circle_level_set

CIRCLE_CENTER = (math.sqrt(2.0) / 30.0, math.sqrt(3.0) / 40.0)
CIRCLE_RADIUS = 1.486


def test_grid_basics():
    grid = CartesianGrid(2.0, 16)
    assert grid.h == pytest.approx(0.25)
    xs = grid.nodes_1d()
    assert xs[0] == -2.0 and xs[-1] == 2.0 and xs.size == 17
    x, y = grid.coordinate(4, 9)
    assert grid.node_of(x, y) == (4, 9)


def test_grid_validation():
    with pytest.raises(ValueError):
        CartesianGrid(-1.0, 16)
    with pytest.raises(ValueError):
        CartesianGrid(2.0, 0)


def test_levelset_shape_validation():
    grid = CartesianGrid(2.0, 8)
    with pytest.raises(ValueError):
        LevelSetField(grid, np.zeros((4, 4)))


def test_classification_counts_match_area(circle_geom_64):
    cls = circle_geom_64.classification
    h = circle_geom_64.grid.h
    area = math.pi * CIRCLE_RADIUS ** 2
    assert cls.n_inside * h * h == pytest.approx(area, rel=0.02)
    # the ghost layer is a one-node band around the circumference
    assert cls.n_ghost * h == pytest.approx(2.0 * math.pi * CIRCLE_RADIUS, rel=0.25)


def test_classification_structure(circle_geom_32):
    cls = circle_geom_32.classification
    inside, ghost = cls.inside_mask, cls.ghost_mask
    assert not (inside & ghost).any()
    # every ghost has an inside axis neighbour
    near = np.zeros_like(inside)
    near[:-1, :] |= inside[1:, :]
    near[1:, :] |= inside[:-1, :]
    near[:, :-1] |= inside[:, 1:]
    near[:, 1:] |= inside[:, :-1]
    assert (ghost <= near).all()
    # nodes enumeration and index array are mutually inverse
    assert (cls.index[cls.nodes[:, 0], cls.nodes[:, 1]]
            == np.arange(cls.n_active)).all()
    assert (cls.index >= 0).sum() == cls.n_active


def test_gather_scatter_roundtrip(circle_geom_16):
    cls = circle_geom_16.classification
    vec = np.arange(cls.n_active, dtype=float)
    assert np.array_equal(cls.gather(cls.scatter(vec)), vec)


def test_degenerate_levelsets_raise():
    grid = CartesianGrid(2.0, 8)
    with pytest.raises(AllOutsideError):
        classify(LevelSetField(grid, np.ones((9, 9))))
    with pytest.raises(AllInsideError):
        classify(LevelSetField(grid, -np.ones((9, 9))))


def test_node_normal_is_radial(circle_geom_32):
    phi = circle_geom_32.phi
    cls = circle_geom_32.classification
    grid = circle_geom_32.grid
    for g in range(0, cls.n_ghost, 5):
        i, j = cls.nodes[cls.n_inside + g]
        nrm = node_normal(phi, int(i), int(j))
        x, y = grid.coordinate(int(i), int(j))
        radial = np.array([x - CIRCLE_CENTER[0], y - CIRCLE_CENTER[1]])
        radial /= np.hypot(*radial)
        assert np.abs(nrm - radial).max() < 0.05


def test_projection_lands_on_circle(circle_geom_64):
    """Boundary projections are third-order accurate on the analytic circle."""
    clo = circle_geom_64.closures
    h = circle_geom_64.grid.h
    dist = np.hypot(clo.projections[:, 0] - CIRCLE_CENTER[0],
                    clo.projections[:, 1] - CIRCLE_CENTER[1])
    assert np.abs(dist - CIRCLE_RADIUS).max() <= 10.0 * h ** 3


def _stencil_coordinates(geom, closure):
    x, y = geom.grid.coordinate(closure.stencil[:, 0], closure.stencil[:, 1])
    return np.asarray(x, float), np.asarray(y, float)


BIQUADRATIC_BASIS = (
    lambda x, y: np.ones_like(x),
    lambda x, y: x,
    lambda x, y: y,
    lambda x, y: x * y,
    lambda x, y: x * x,
    lambda x, y: y * y,
)


def test_dirichlet_rows_reproduce_biquadratic_basis(circle_geom_32):
    geom = circle_geom_32
    for closure in geom.closures.closures:
        if not closure.standard:
            continue
        x, y = _stencil_coordinates(geom, closure)
        bx, by = closure.projection
        for p in BIQUADRATIC_BASIS:
            assert closure.dirichlet_row @ p(x, y) == pytest.approx(
                float(p(np.asarray(bx), np.asarray(by))), abs=1.0e-12)


def test_neumann_rows_differentiate_biquadratic_basis(circle_geom_32):
    geom = circle_geom_32
    for closure in geom.closures.closures:
        if not closure.standard:
            continue
        x, y = _stencil_coordinates(geom, closure)
        nx, ny = closure.boundary_normal
        bx, by = closure.projection
        # constants are annihilated; linear functions give their
        # directional derivative along the boundary normal
        assert abs(closure.neumann_row.sum()) < 1.0e-12
        assert closure.neumann_row @ x == pytest.approx(nx, abs=1.0e-10)
        assert closure.neumann_row @ y == pytest.approx(ny, abs=1.0e-10)
        assert closure.neumann_row @ (x * y) == pytest.approx(
            nx * by + ny * bx, abs=1.0e-9)


def test_fallback_rows_keep_constant_reproduction(squares_geom_16):
    """Degree-reduced stencils still reproduce constants at B; linears are
    kept along every axis that retained at least two interpolation nodes."""
    geom = squares_geom_16
    for closure in geom.closures.closures:
        x, y = _stencil_coordinates(geom, closure)
        bx, by = closure.projection
        assert closure.dirichlet_row.sum() == pytest.approx(1.0, abs=1.0e-10)
        assert abs(closure.neumann_row.sum()) < 1.0e-10
        live = closure.dirichlet_row != 0.0
        if np.unique(x[live]).size >= 2:
            assert closure.dirichlet_row @ x == pytest.approx(bx, abs=1.0e-10)
        if np.unique(y[live]).size >= 2:
            assert closure.dirichlet_row @ y == pytest.approx(by, abs=1.0e-10)


def test_project_to_boundary_rejects_non_ghost(circle_geom_16):
    geom = circle_geom_16
    i, j = geom.classification.nodes[0]
    with pytest.raises(ValueError):
        project_to_boundary(geom.phi, (int(i), int(j)), geom.classification)


def test_stencil_entry_zero_is_the_ghost(circle_geom_16):
    cls = circle_geom_16.classification
    st = circle_geom_16.closures.stencil_index
    assert (st[:, 0] == cls.n_inside + np.arange(cls.n_ghost)).all()


def test_image_to_levelset_recovers_disk():
    img = np.ones((256, 256))
    rows, cols = np.mgrid[0:256, 0:256]
    img[(rows - 128.0) ** 2 + (cols - 128.0) ** 2 < 80.0 ** 2] = 0.0
    grid = CartesianGrid(2.0, 64)
    phi = image_to_levelset(img, grid)
    cls = classify(phi)
    # dark disk of radius 80/256 of the box width -> radius 1.25 in domain units
    area = math.pi * 1.25 ** 2
    assert cls.n_inside * grid.h ** 2 == pytest.approx(area, rel=0.05)


def test_image_orientation_top_row_maps_to_positive_y():
    img = np.ones((64, 64))
    img[:24, :] = 0.0                     # dark band at the top of the image
    grid = CartesianGrid(2.0, 32)
    phi = image_to_levelset(img, grid, smoothing_steps=0)
    inside = phi.values < 0
    ys = grid.nodes_1d()[np.nonzero(inside)[1]]
    assert ys.min() > 0.0


def test_image_to_levelset_rejects_flat_images():
    grid = CartesianGrid(2.0, 16)
    with pytest.raises(EmptyImageError):
        image_to_levelset(np.ones((32, 32)), grid)


def test_reinitialize_restores_unit_gradient():
    grid = CartesianGrid(2.0, 64)
    # distorted distance function of a circle of radius 1
    phi = LevelSetField.from_function(
        grid, lambda x, y: 3.0 * (np.hypot(x, y) - 1.0))
    out = reinitialize(phi, steps=200)
    gx, gy = np.gradient(out.values, grid.h, grid.h)
    mag = np.hypot(gx, gy)
    ring = np.abs(out.values) < 0.5
    assert np.abs(mag[ring] - 1.0).max() < 0.15
    # the zero level set stays put to O(h)
    zero_before = np.abs(phi.values) < 0.05
    assert np.abs(out.values[zero_before]).max() < 2.0 * grid.h
