"""Newton-Raphson time stepping for the Crank-Nicolson discretisation.

Each time step solves the nonlinear system F(W) = 0 by plain Newton
iteration (no line search): assemble the Jacobian at the current guess,
solve J . dW = F with the multigrid linear solver, update W <- W - dW.
The initial guess is the previous time level.  Iteration stops when

    min( ||F(W)||_inf , ||dW||_inf / ||W||_inf ) < 1e-9.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .discretization import ModelParams, State, residual
from .errors import LinearSolveFailureError, MaxNewtonIterationsError, \
    SingularPivotError
from .geometry import ProblemGeometry
from .multigrid import CycleConfig, MgLevel, MultigridSolver, w_cycle

NEWTON_TOL = 1.0e-9
MAX_NEWTON_ITERATIONS = 25
DEFAULT_SNAPSHOT_TIMES = (0.25, 0.5, 0.75, 1.0)

TRACE_FIELDS = ("time_index", "newton_iter", "residual_inf", "wcycles", "rho_last")


@dataclass
class NewtonTrace:
    """Per-iterate convergence log across one or more time steps.

    Each row is (time_index, newton_iter, residual_inf, wcycles, rho_last):
    the residual norm after the iterate's update, the number of W-cycles
    the inner solve took, and the defect ratio of its last cycle.
    """

    rows: list = field(default_factory=list)
    rescues: int = 0               # steps that needed the field-split rescue

    def append(self, time_index, newton_iter, residual_inf, wcycles, rho_last):
        self.rows.append((int(time_index), int(newton_iter),
                          float(residual_inf), int(wcycles), float(rho_last)))

    def iterations(self, time_index=None):
        """Newton iteration count, total or for one time step."""
        return sum(1 for r in self.rows
                   if time_index is None or r[0] == time_index)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_FIELDS)
            for row in self.rows:
                writer.writerow((row[0], row[1],
                                 format(row[2], ".17g"), row[3],
                                 format(row[4], ".17g")))


def _rho_last(history):
    if len(history) >= 2 and history[-2] > 0.0:
        return history[-1] / history[-2]
    return 0.0


# ---------------------------------------------------------------------------
# field-split predictor
#
# On coarse grids the inconsistent start (s jumps to s_b at the boundary
# while the carbonate is still rich) makes the first Crank-Nicolson steps
# very stiff: the plain W^n initial guess can send Newton towards spurious
# roots with negative porosity, where the linearised system is no longer
# solvable.  The system itself still has a physical root: for frozen c the
# gas equations are linear in s, and for frozen s every carbonate equation
# is a scalar quadratic with exactly one admissible branch.  Alternating
# those two exact partial solves a few times lands inside the physical
# basin, after which plain Newton converges quadratically.

def _carbonate_nodal(s1, W_prev, params, dt, x, y, t1):
    """Admissible root of each nodal Crank-Nicolson carbonate equation."""
    g = params.a / (2.0 * params.m_s)
    p0 = params.porosity(W_prev.c)
    r0 = g * p0 * W_prev.s * W_prev.c
    src = 0.0
    if params.f2 is not None:
        src = 0.5 * (params.f2(x, y, W_prev.t) + params.f2(x, y, t1))
    A = g * params.alpha * s1
    B = 1.0 / dt + g * params.beta * s1
    C = -W_prev.c / dt + r0 - src
    quad = A > 1.0e-14 * np.abs(B)
    disc = np.sqrt(np.maximum(B * B - 4.0 * A * C, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.where(quad, (-B + disc) / (2.0 * A), -C / np.where(B != 0.0, B, 1.0))
    return root


def _gas_only_levels(levels):
    """Hierarchy copy whose operator is the s block alone (c frozen)."""
    out = []
    for lv in levels:
        b = lv.blocks
        nb = replace(b, sc_vals=np.zeros_like(b.sc_vals),
                     cs_diag=np.zeros_like(b.cs_diag),
                     cc_diag=np.ones_like(b.cc_diag))
        out.append(MgLevel(lv.geom, lv.coeffs, nb, lv.tau_row, lv.vanka))
    return out


def predict(W_prev: State, params: ModelParams, geom: ProblemGeometry,
            dt: float, linear_solver: MultigridSolver, passes: int = 3) -> State:
    """Initial guess for the next time level by alternating partial solves."""
    n = geom.n_active
    nodes = geom.classification.nodes
    x, y = geom.grid.coordinate(nodes[:, 0], nodes[:, 1])
    W = State(W_prev.s.copy(), W_prev.c.copy(), W_prev.t + dt)
    zero = np.zeros(n)
    for _ in range(passes):
        linear_solver.update(W)
        rhs = -residual(State(zero, W.c, W.t), W_prev, params, geom, dt)[:n]
        W.s = w_cycle(_gas_only_levels(linear_solver.levels), rhs, zero.copy(),
                      config=linear_solver.config)[0]
        W.c = _carbonate_nodal(W.s, W_prev, params, dt, x, y, W.t)
    return W


def _newton_loop(W, W_prev, params, geom, dt, linear_solver, time_index,
                 trace, tol, max_iterations):
    n = geom.n_active
    res0 = None
    for k in range(1, max_iterations + 1):
        F = residual(W, W_prev, params, geom, dt)
        res = np.abs(F).max()
        res0 = res if res0 is None else res0
        if res < tol:
            trace.append(time_index, k, res, 0, 0.0)
            return W
        if not np.isfinite(res) or res > 1.0e4 * max(res0, 1.0):
            raise LinearSolveFailureError(
                f"residual diverged to {res:.3e} at iterate {k}")
        linear_solver.update(W)
        dW, history = linear_solver.solve(F)
        scale = max(np.abs(W.s).max(), np.abs(W.c).max())
        W.s -= dW[:n]
        W.c -= dW[n:]
        rel = np.abs(dW).max() / scale if scale > 0.0 else np.inf
        F = residual(W, W_prev, params, geom, dt)
        res = np.abs(F).max()
        trace.append(time_index, k, res, len(history) - 1, _rho_last(history))
        if min(res, rel) < tol:
            return W
    raise MaxNewtonIterationsError(
        f"no convergence in {max_iterations} iterations at time index "
        f"{time_index} (residual {res:.3e})", trace=trace)


def step(W_prev: State, params: ModelParams, geom: ProblemGeometry, dt: float,
         linear_solver: MultigridSolver | None = None, *,
         time_index: int = 0, trace: NewtonTrace | None = None,
         tol: float = NEWTON_TOL, max_iterations: int = MAX_NEWTON_ITERATIONS,
         use_predictor: bool = False):
    """Advance one time step; returns (W_next, trace).

    The initial guess is the previous time level; with ``use_predictor``
    (or as a rescue when the plain guess fails) it is refined by the
    field-split predictor first.  Raises MaxNewtonIterationsError (with
    the trace attached) if the stopping criterion is never met.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if linear_solver is None:
        linear_solver = MultigridSolver(geom, params, dt)
    trace = trace if trace is not None else NewtonTrace()

    attempts = [use_predictor] if use_predictor else [False, True]
    last_error = None
    for with_predictor in attempts:
        try:
            if with_predictor:
                if not use_predictor:
                    trace.rescues += 1
                W = predict(W_prev, params, geom, dt, linear_solver)
            else:
                W = State(W_prev.s.copy(), W_prev.c.copy(), W_prev.t + dt)
            W = _newton_loop(W, W_prev, params, geom, dt, linear_solver,
                             time_index, trace, tol, max_iterations)
            return W, trace
        except (LinearSolveFailureError, SingularPivotError,
                MaxNewtonIterationsError) as err:
            last_error = err
    raise MaxNewtonIterationsError(
        f"time step at index {time_index} failed (last error: {last_error})",
        trace=trace)


def march(W0: State, params: ModelParams, geom: ProblemGeometry, dt: float,
          n_steps: int, *, snapshot_times=(), config: CycleConfig | None = None,
          trace: NewtonTrace | None = None, callback=None,
          solver: MultigridSolver | None = None):
    """Advance ``n_steps`` time steps of size dt from W0.

    Returns (W_final, trace, snapshots) where snapshots maps each requested
    time to the state at the nearest time level.  ``callback(step_index, W)``,
    when given, is invoked after every accepted step.  Once a step needed
    the field-split rescue, later steps start from the predictor directly.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    trace = trace if trace is not None else NewtonTrace()
    if solver is None:
        solver = MultigridSolver(geom, params, dt, config)
    snapshots = {}
    remaining = sorted(snapshot_times)
    use_predictor = False

    W = W0
    for t_req in list(remaining):
        if abs(W.t - t_req) <= 0.5 * dt:
            snapshots[t_req] = W.copy()
            remaining.remove(t_req)
    for step_index in range(1, n_steps + 1):
        before = trace.rescues
        W, trace = step(W, params, geom, dt, solver,
                        time_index=step_index, trace=trace,
                        use_predictor=use_predictor)
        if trace.rescues > before:
            use_predictor = True
        for t_req in list(remaining):
            if abs(W.t - t_req) <= 0.5 * dt:
                snapshots[t_req] = W.copy()
                remaining.remove(t_req)
        if callback is not None:
            callback(step_index, W)
    return W, trace, snapshots
