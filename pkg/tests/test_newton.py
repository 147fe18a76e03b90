"""Time stepping: Newton iteration, predictor rescue, snapshot marching."""

import numpy as np
import pytest

from sulfation2d.discretization import ModelParams, State, residual
from sulfation2d.errors import MaxNewtonIterationsError
from sulfation2d.harness import (circle_level_set, manufactured_case,
                                 physical_data)
from sulfation2d.newton import NEWTON_TOL, NewtonTrace, march, step

from conftest import build_geometry


@pytest.fixture(scope="module")
def setup_32():
    geom = build_geometry(circle_level_set, 32)
    params = ModelParams(s_b=1.0)
    return geom, params


def test_step_converges_and_advances_time(setup_32):
    geom, params = setup_32
    dt = geom.grid.h
    W0 = physical_data(geom)
    W1, trace = step(W0, params, geom, dt)
    assert W1.t == pytest.approx(dt)
    F = residual(W1, W0, params, geom, dt)
    assert np.abs(F).max() < NEWTON_TOL
    assert trace.iterations(0) >= 1


def test_step_input_validation(setup_32):
    geom, params = setup_32
    with pytest.raises(ValueError):
        step(physical_data(geom), params, geom, 0.0)


def test_newton_residuals_decay_fast(setup_32):
    """Once inside the basin, successive residual norms drop steeply."""
    geom, params = setup_32
    dt = geom.grid.h
    _, trace = step(physical_data(geom), params, geom, dt)
    res = [row[2] for row in trace.rows]
    assert res[-1] < 1.0e-9
    if len(res) >= 2:
        assert res[-1] < 1.0e-4 * res[-2]


def test_iteration_cap_raises_with_trace(setup_32):
    geom, params = setup_32
    with pytest.raises(MaxNewtonIterationsError) as err:
        step(physical_data(geom), params, geom, geom.grid.h,
             max_iterations=1, use_predictor=True)
    assert err.value.trace is not None


def test_march_collects_snapshots(setup_32):
    geom, params = setup_32
    dt = geom.grid.h
    W, trace, snapshots = march(physical_data(geom), params, geom, dt, 4,
                                snapshot_times=(2 * dt, 4 * dt))
    assert W.t == pytest.approx(4 * dt)
    assert sorted(snapshots) == [pytest.approx(2 * dt), pytest.approx(4 * dt)]
    assert snapshots[4 * dt].t == pytest.approx(W.t)
    assert trace.iterations() >= 4


def test_march_zero_steps_returns_initial_state(setup_32):
    geom, params = setup_32
    W0 = physical_data(geom)
    W, _, snapshots = march(W0, params, geom, 0.1, 0, snapshot_times=(0.0,))
    assert W is W0
    assert 0.0 in snapshots
    with pytest.raises(ValueError):
        march(W0, params, geom, 0.1, -1)


def test_march_callback_sees_every_step(setup_32):
    geom, params = setup_32
    seen = []
    march(physical_data(geom), params, geom, geom.grid.h, 3,
          callback=lambda k, W: seen.append((k, W.t)))
    assert [k for k, _ in seen] == [1, 2, 3]


def test_manufactured_step_tracks_exact_solution():
    """One step from exact data stays close to the exact solution."""
    case = manufactured_case("circle")
    geom = build_geometry(circle_level_set, 32)
    cls = geom.classification
    dt = geom.grid.h
    x, y = geom.grid.coordinate(cls.nodes[:, 0], cls.nodes[:, 1])
    x, y = np.asarray(x, float), np.asarray(y, float)
    from sulfation2d.discretization import extrapolate_initial_data
    s0 = extrapolate_initial_data(case.s_exact(x, y, 0.0)[:cls.n_inside], geom)
    c0 = extrapolate_initial_data(case.c_exact(x, y, 0.0)[:cls.n_inside], geom)
    W1, _ = step(State(s0, c0, 0.0), case.params, geom, dt)
    inside = slice(0, cls.n_inside)
    s_err = np.abs(W1.s[inside] - case.s_exact(x, y, dt)[inside]).max()
    c_err = np.abs(W1.c[inside] - case.c_exact(x, y, dt)[inside]).max()
    assert s_err < 5.0e-3
    assert c_err < 5.0e-3


def test_trace_csv_roundtrip(tmp_path):
    trace = NewtonTrace()
    trace.append(0, 1, 1.5e-3, 4, 0.12)
    trace.append(1, 1, 2.0e-10, 3, 0.08)
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("time_index")
    assert len(lines) == 3
    assert trace.iterations() == 2
    assert trace.iterations(1) == 1
