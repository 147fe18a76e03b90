"""Experiment drivers: accuracy sweeps, solver-efficiency traces, images.

Three kinds of runs are provided:

* :func:`run_accuracy` marches a manufactured-solution problem (exact pair
  known in closed form, sources chosen to match) over a sequence of grid
  sizes and reports relative errors and convergence orders for the
  solutions and their gradients.
* :func:`run_efficiency` marches the physical sulfation data and records
  the defect-reduction factor of every W-cycle of every linear solve.
* :func:`run_geometry` ingests a binary raster image as the domain,
  marches the physical data, and dumps snapshot fields plus contour
  polylines of the carbonate front.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import (DIRICHLET, NEUMANN, ModelParams, State,
                             extrapolate_initial_data)
from .errors import SulfationError
from .fields_io import write_field
from .geometry import (CartesianGrid, ProblemGeometry, image_to_levelset,
                       load_raster, reinitialize)
from .multigrid import CycleConfig, MultigridSolver
from .newton import DEFAULT_SNAPSHOT_TIMES, NewtonTrace, march

DEFAULT_SIZES = (16, 32, 64, 128, 256)
FIELDS = ("s", "c", "grad_s", "grad_c")
NORMS = ("l1", "linf")

_FMT = ".17g"


# ---------------------------------------------------------------------------
# reference domains

def circle_level_set(x, y):
    """Disk of radius 1.486 centred slightly off the origin."""
    x0, y0, radius = math.sqrt(2.0) / 30.0, math.sqrt(3.0) / 40.0, 1.486
    return np.hypot(x - x0, y - y0) - radius


def square_circles_level_set(x, y):
    """Union of a square and four corner-centred disks (rounded cross)."""
    half, radius = 0.9567, 0.3
    ax, ay = np.abs(x), np.abs(y)
    square = np.maximum(ax, ay) - half
    corners = np.hypot(ax - half, ay - half) - radius
    return np.minimum(square, corners)


DOMAINS = {
    "circle": circle_level_set,
    "square-circles": square_circles_level_set,
}


# ---------------------------------------------------------------------------
# manufactured solution

_SQRT2 = math.sqrt(2.0)
_SQRT3 = math.sqrt(3.0)


def _s_exact(x, y, t):
    return 2.0 + np.sin(x) * np.cos(y) * np.sin(t + _SQRT2)


def _s_dt(x, y, t):
    return np.sin(x) * np.cos(y) * np.cos(t + _SQRT2)


def _grad_s_exact(x, y, t):
    amp = np.sin(t + _SQRT2)
    return (np.cos(x) * np.cos(y) * amp, -np.sin(x) * np.sin(y) * amp)


def _lap_s(x, y, t):
    return -2.0 * np.sin(x) * np.cos(y) * np.sin(t + _SQRT2)


def _c_exact(x, y, t):
    return 3.0 + np.sin(0.5 * x) * np.cos(3.0 * y) * np.sin(2.0 * t + _SQRT3)


def _c_dt(x, y, t):
    return 2.0 * np.sin(0.5 * x) * np.cos(3.0 * y) * np.cos(2.0 * t + _SQRT3)


def _grad_c_exact(x, y, t):
    amp = np.sin(2.0 * t + _SQRT3)
    return (0.5 * np.cos(0.5 * x) * np.cos(3.0 * y) * amp,
            -3.0 * np.sin(0.5 * x) * np.sin(3.0 * y) * amp)


def _outward_normal(level_set, x, y, eps=1.0e-6):
    """Unit outward normal of {level_set < 0}, by central differences."""
    gx = (level_set(x + eps, y) - level_set(x - eps, y)) / (2.0 * eps)
    gy = (level_set(x, y + eps) - level_set(x, y - eps)) / (2.0 * eps)
    norm = np.hypot(gx, gy)
    return gx / norm, gy / norm


@dataclass(frozen=True)
class ManufacturedCase:
    """A forced problem whose exact solution pair is known in closed form.

    ``params`` carries the sources f1, f2 and the boundary datum derived
    from the exact pair; substituting the pair into the forced equations
    gives an identically zero residual.
    """

    name: str
    domain: str
    bc: str
    level_set: object
    params: ModelParams
    s_exact: object = _s_exact
    c_exact: object = _c_exact
    grad_s_exact: object = _grad_s_exact
    grad_c_exact: object = _grad_c_exact


def manufactured_case(domain: str = "circle", bc: str = DIRICHLET,
                      base: ModelParams | None = None) -> ManufacturedCase:
    """Build the standard forced problem on one of the reference domains.

    The sources make (s_exact, c_exact) solve the forced system with the
    physical coefficients of ``base`` (default coefficients if omitted);
    the boundary datum is the exact trace (Dirichlet) or the exact normal
    derivative (Neumann).
    """
    level_set = DOMAINS[domain]
    base = base if base is not None else ModelParams()

    def f1(x, y, t):
        s, c = _s_exact(x, y, t), _c_exact(x, y, t)
        p, dp = base.porosity(c), base.dporosity(c)
        sx, sy = _grad_s_exact(x, y, t)
        cx, cy = _grad_c_exact(x, y, t)
        diffusion = p * _lap_s(x, y, t) + dp * (cx * sx + cy * sy)
        return (p * _s_dt(x, y, t) + dp * s * _c_dt(x, y, t)
                + (base.a / base.m_c) * p * s * c - base.d * diffusion)

    def f2(x, y, t):
        s, c = _s_exact(x, y, t), _c_exact(x, y, t)
        return _c_dt(x, y, t) + (base.a / base.m_s) * base.porosity(c) * s * c

    if bc == DIRICHLET:
        s_b = _s_exact
    elif bc == NEUMANN:
        def s_b(x, y, t):
            nx, ny = _outward_normal(level_set, x, y)
            sx, sy = _grad_s_exact(x, y, t)
            return nx * sx + ny * sy
    else:
        raise ValueError(f"unknown boundary kind {bc!r}")

    params = ModelParams(a=base.a, d=base.d, m_s=base.m_s, m_c=base.m_c,
                         alpha=base.alpha, beta=base.beta, s_b=s_b, bc=bc,
                         f1=f1, f2=f2, porosity_fn=base.porosity_fn,
                         dporosity_fn=base.dporosity_fn)
    return ManufacturedCase(name=f"{domain}-{bc}", domain=domain, bc=bc,
                            level_set=level_set, params=params)


# ---------------------------------------------------------------------------
# accuracy

@dataclass
class ErrorReport:
    """Relative errors and convergence orders over a grid-size sweep.

    ``errors[(field, norm)]`` holds one value per size, fields in
    :data:`FIELDS` and norms in :data:`NORMS`.  All errors are relative:
    ||numeric - exact||_p / ||exact||_p over the counted nodes.
    """

    sizes: tuple
    errors: dict = field(default_factory=dict)

    def table(self, name: str, norm: str) -> np.ndarray:
        return np.asarray(self.errors[(name, norm)])

    def observed_orders(self, name: str, norm: str) -> np.ndarray:
        """Pairwise orders log2(e_h / e_{h/2}); one fewer than sizes."""
        e = self.table(name, norm)
        return np.log2(e[:-1] / e[1:])

    def fitted_order(self, name: str, norm: str) -> float:
        """Least-squares slope of log error versus log size."""
        e = self.table(name, norm)
        slope = np.polyfit(np.log2(np.asarray(self.sizes, dtype=float)),
                           np.log2(e), 1)[0]
        return -float(slope)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["N"]
            for name in FIELDS:
                for norm in NORMS:
                    header += [f"{norm}_{name}", f"order_{norm}_{name}"]
            writer.writerow(header)
            for k, n in enumerate(self.sizes):
                row = [n]
                for name in FIELDS:
                    for norm in NORMS:
                        e = self.table(name, norm)
                        order = ("" if k == 0 else
                                 format(math.log2(e[k - 1] / e[k]), ".2f"))
                        row += [format(e[k], _FMT), order]
                writer.writerow(row)
            row = ["fitted"]
            for name in FIELDS:
                for norm in NORMS:
                    row += ["", format(self.fitted_order(name, norm), ".3f")]
            writer.writerow(row)


def _field_errors(case, geom, W):
    """Relative L1/Linf errors of s, c and their gradient magnitudes."""
    cls = geom.classification
    grid = cls.grid
    h = grid.h
    xs = grid.nodes_1d()
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    inside = cls.inside_mask
    active = inside | cls.ghost_mask
    # gradient nodes: inside with the full 4-neighbourhood active
    grad_ok = np.zeros_like(inside)
    grad_ok[1:-1, 1:-1] = (inside[1:-1, 1:-1]
                           & active[2:, 1:-1] & active[:-2, 1:-1]
                           & active[1:-1, 2:] & active[1:-1, :-2])
    out = {}
    for name, vec, exact, grad_exact in (
            ("s", W.s, case.s_exact, case.grad_s_exact),
            ("c", W.c, case.c_exact, case.grad_c_exact)):
        U = cls.scatter(vec)
        E = exact(X, Y, W.t)
        diff = np.abs(U - E)[inside]
        ref = np.abs(E)[inside]
        out[(name, "l1")] = float(diff.sum() / ref.sum())
        out[(name, "linf")] = float(diff.max() / ref.max())

        mag = np.full_like(U, np.nan)
        mag[1:-1, 1:-1] = np.hypot((U[2:, 1:-1] - U[:-2, 1:-1]) / (2.0 * h),
                                   (U[1:-1, 2:] - U[1:-1, :-2]) / (2.0 * h))
        ex, ey = grad_exact(X, Y, W.t)
        mag_exact = np.hypot(ex, ey)
        diff = np.abs(mag - mag_exact)[grad_ok]
        ref = mag_exact[grad_ok]
        out[("grad_" + name, "l1")] = float(diff.sum() / ref.sum())
        out[("grad_" + name, "linf")] = float(diff.max() / ref.max())
    return out


def run_accuracy(case: ManufacturedCase, sizes=DEFAULT_SIZES, *,
                 t_final: float = 1.0,
                 config: CycleConfig | None = None) -> ErrorReport:
    """March the forced problem to ``t_final`` with dt = h for each size."""
    report = ErrorReport(tuple(sizes),
                         {(name, norm): [] for name in FIELDS
                          for norm in NORMS})
    for n in sizes:
        grid = CartesianGrid(2.0, n)
        geom = ProblemGeometry.build(grid, case.level_set)
        dt = grid.h
        n_steps = int(round(t_final / dt))
        cls = geom.classification
        xi, yi = grid.coordinate(cls.nodes[:cls.n_inside, 0],
                                 cls.nodes[:cls.n_inside, 1])
        s0 = extrapolate_initial_data(case.s_exact(xi, yi, 0.0), geom)
        c0 = extrapolate_initial_data(case.c_exact(xi, yi, 0.0), geom)
        try:
            W, _, _ = march(State(s0, c0, 0.0), case.params, geom, dt,
                            n_steps, config=config)
        except SulfationError as err:
            raise type(err)(f"accuracy run failed at N={n}: {err}") from err
        for key, value in _field_errors(case, geom, W).items():
            report.errors[key].append(value)
    return report


# ---------------------------------------------------------------------------
# efficiency

@dataclass
class RhoTrace:
    """Per-cycle defect-reduction factors across all linear solves.

    Each row is (system, cycle, defect_inf, rho, first): the linear-system
    counter, the cycle number within that solve, the defect after the
    cycle, the ratio to the previous defect, and whether this is the first
    cycle of its system (those see a rougher defect and run higher).
    """

    rows: list = field(default_factory=list)

    @classmethod
    def from_histories(cls, histories) -> "RhoTrace":
        rows = []
        for system, history in enumerate(histories):
            for q in range(1, len(history)):
                rows.append((system, q, float(history[q]),
                             float(history[q] / history[q - 1]), q == 1))
        return cls(rows)

    def rhos(self, *, skip_systems: int = 0,
             include_first: bool = True) -> np.ndarray:
        """All factors, optionally dropping warm-up systems / first cycles."""
        return np.asarray([r[3] for r in self.rows
                           if r[0] >= skip_systems
                           and (include_first or not r[4])])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("system", "cycle", "defect_inf", "rho", "first"))
            for system, cycle, defect, rho, first in self.rows:
                writer.writerow((system, cycle, format(defect, _FMT),
                                 format(rho, _FMT), int(first)))


def physical_data(geom: ProblemGeometry, s0: float = 0.0,
                  c0: float = 10.0) -> State:
    """Initial state of the physical runs: no gas, full carbonate."""
    ni = geom.classification.n_inside
    s_init = extrapolate_initial_data(np.full(ni, s0), geom)
    c_init = extrapolate_initial_data(np.full(ni, c0), geom)
    return State(s_init, c_init, 0.0)


def run_efficiency(domain: str = "circle", n: int = 64, *,
                   t_final: float = 1.0, params: ModelParams | None = None,
                   config: CycleConfig | None = None):
    """March the physical data, logging every W-cycle's defect ratio.

    Returns (rho_trace, newton_trace, final_state).
    """
    grid = CartesianGrid(2.0, n)
    geom = ProblemGeometry.build(grid, DOMAINS[domain])
    params = params if params is not None else ModelParams(s_b=1.0)
    dt = grid.h
    n_steps = int(round(t_final / dt))
    solver = MultigridSolver(geom, params, dt, config)
    solver.history_log = []
    W, trace, _ = march(physical_data(geom), params, geom, dt, n_steps,
                        config=config, solver=solver)
    return RhoTrace.from_histories(solver.history_log), trace, W


# ---------------------------------------------------------------------------
# image-defined geometries

def contour_polylines(classification, values, level: float = 5.0):
    """Iso-contour polylines of a nodal field as (x, y) arrays.

    Inactive nodes are masked, so contours are traced on active nodes only
    and may be open where the level set leaves the active band.
    """
    from skimage import measure

    F = classification.scatter(values)
    grid = classification.grid
    lines = []
    for contour in measure.find_contours(F, level):
        x = -grid.half_width + grid.h * contour[:, 0]
        y = -grid.half_width + grid.h * contour[:, 1]
        lines.append(np.column_stack([x, y]))
    return lines


def write_contours(snapshots_contours, path) -> None:
    """Write ``{t: [polyline, ...]}`` as CSV rows (t, polyline_id, x, y)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t", "polyline_id", "x", "y"))
        for t in sorted(snapshots_contours):
            for pid, line in enumerate(snapshots_contours[t]):
                for x, y in line:
                    writer.writerow((format(t, _FMT), pid,
                                     format(x, _FMT), format(y, _FMT)))


def run_geometry(image, n: int = 512,
                 snapshot_times=DEFAULT_SNAPSHOT_TIMES, *,
                 out_dir=".", t_final: float = 1.0, smoothing_steps: int = 10,
                 contour_level: float = 5.0,
                 params: ModelParams | None = None,
                 config: CycleConfig | None = None):
    """March the physical data on an image-defined domain; dump artifacts.

    ``image`` is a raster path or array (dark = inside).  Writes s and c
    field dumps at each snapshot time plus one contour CSV; returns
    (artifact paths, snapshots, newton trace).
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    raster = image if isinstance(image, np.ndarray) else load_raster(image)
    grid = CartesianGrid(2.0, n)
    phi = image_to_levelset(raster, grid, smoothing_steps)
    # the mollified +-1 field is far from a distance function; without
    # reinitialisation its flat gradients make the ghost closures
    # ill-conditioned and the boundary projections unreliable
    phi = reinitialize(phi, steps=2 * n)
    geom = ProblemGeometry.build(grid, phi)
    params = params if params is not None else ModelParams(s_b=1.0)
    dt = grid.h
    n_steps = int(round(t_final / dt))
    W, trace, snapshots = march(physical_data(geom), params, geom, dt,
                                n_steps, snapshot_times=snapshot_times,
                                config=config)
    paths = []
    contours = {}
    for t in sorted(snapshots):
        tag = format(t, ".4g").replace(".", "p")
        for name, vec in (("s", snapshots[t].s), ("c", snapshots[t].c)):
            path = os.path.join(out_dir, f"{name}_t{tag}.csv")
            write_field(grid, geom.classification, vec, path)
            paths.append(path)
        contours[t] = contour_polylines(geom.classification, snapshots[t].c,
                                        contour_level)
    contour_path = os.path.join(out_dir, "contours.csv")
    write_contours(contours, contour_path)
    paths.append(contour_path)
    return paths, snapshots, trace
