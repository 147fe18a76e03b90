"""Boundary-aware geometric multigrid for the linearised coupled system.

The linear system J.dW = F produced at each Newton iterate is solved by
W-cycles on a hierarchy of grids obtained by halving the lattice down to an
8x8 coarsest grid.  Smoothing is a collective 2x2 Gauss-Seidel on interior
rows and a relaxed update on boundary-closure rows; the defect restriction
is full weighting, modified near the boundary so that interior equations
read inside values only and closure equations read outside values only;
the error prolongation is plain bilinear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit

from .discretization import (
    DIRICHLET,
    JacobianBlocks,
    ModelParams,
    State,
    assemble_jacobian,
    extrapolate_initial_data,
)
from .errors import (
    GeometryError,
    HierarchyTooShallowError,
    LinearSolveFailureError,
    SingularPivotError,
)
from .geometry import CartesianGrid, LevelSetField, ProblemGeometry

COARSEST_INTERVALS = 8


@dataclass
class CycleConfig:
    """Knobs of one W-cycle run."""

    nu_pre: int = 2
    nu_post: int = 1
    gamma: int = 2                 # recursive coarse visits (2 = W-cycle)
    tau_s: float = 0.9             # closure-row relaxation (Dirichlet case)
    ghost_blocks: bool = True      # coupled relaxation of closure stencils
    tol: float = 1.0e-11           # outer defect tolerance (inf norm)
    max_cycles: int = 40
    krylov_max_restarts: int = 5   # GMRES(40) restarts in the fallback

    def __post_init__(self):
        if self.nu_pre < 0 or self.nu_post < 0:
            raise ValueError("smoothing counts must be >= 0")
        if not 0.0 < self.tau_s < 1.0:
            raise ValueError("tau_s must lie in (0, 1)")


@dataclass
class MgLevel:
    """One grid level: geometry, frozen coefficients, operator, relaxation."""

    geom: ProblemGeometry
    coeffs: State
    blocks: JacobianBlocks
    tau_row: np.ndarray            # (N_g,) closure-row relaxation parameters
    vanka: tuple | None = None     # coupled closure-stencil blocks, or None
    coarse_lu: object | None = None  # cached LU when used as the coarsest level


# ---------------------------------------------------------------------------
# geometry hierarchy

def coarsen_geometry(geom: ProblemGeometry) -> ProblemGeometry:
    """Geometry on the lattice with every other node, same level-set."""
    grid = geom.grid
    if grid.intervals % 2 != 0:
        raise ValueError("interval count must be even to coarsen")
    coarse_grid = CartesianGrid(grid.half_width, grid.intervals // 2)
    phi_c = LevelSetField(coarse_grid, geom.phi.values[::2, ::2].copy())
    return ProblemGeometry.build(coarse_grid, phi_c)


def geometry_chain(geom: ProblemGeometry) -> list:
    """Finest-to-coarsest geometries, cached on the finest geometry."""
    chain = getattr(geom, "_mg_chain", None)
    if chain is not None:
        return chain
    if geom.grid.intervals < 2 * COARSEST_INTERVALS:
        raise HierarchyTooShallowError(
            f"need at least {2 * COARSEST_INTERVALS} intervals, got {geom.grid.intervals}")
    chain = [geom]
    while chain[-1].grid.intervals % 2 == 0 \
            and chain[-1].grid.intervals // 2 >= COARSEST_INTERVALS:
        try:
            chain.append(coarsen_geometry(chain[-1]))
        except GeometryError:
            # The sampled level set no longer resolves the domain (narrow
            # lobes collapse to isolated nodes whose boundary projection
            # has no sign change); stop at the last level that builds.
            break
    object.__setattr__(geom, "_mg_chain", chain)
    return chain


def _inject_index(fine: ProblemGeometry, coarse: ProblemGeometry) -> np.ndarray:
    """Fine active index of each coarse active node (-1 if fine-inactive)."""
    nodes = coarse.classification.nodes
    return fine.classification.index[2 * nodes[:, 0], 2 * nodes[:, 1]]


def _tau_rows(geom: ProblemGeometry, params: ModelParams, tau_s: float) -> np.ndarray:
    """Per-closure relaxation parameters on one level.

    Dirichlet rows use the configured tau_s; the Neumann closure carries a
    1/h scaling, so tau is rescaled by 2*sqrt(2)*h/3 to keep the diagonal
    iteration contractive.  Rows built on fallback stencils get an exact
    per-row parameter 1/diagonal whenever the policy value would not
    contract.
    """
    clo = geom.closures
    if params.bc == DIRICHLET:
        rows = clo.dirichlet_rows
        tau = np.full(rows.shape[0], tau_s)
    else:
        rows = clo.neumann_rows
        tau = np.full(rows.shape[0], tau_s * 2.0 * np.sqrt(2.0) * geom.grid.h / 3.0)
    diag = rows[:, 0]
    bad = (~clo.standard) & ~((tau * diag > 0.0) & (tau * diag < 2.0)) & (diag != 0.0)
    tau[bad] = 1.0 / diag[bad]
    return tau


def build_hierarchy(geom: ProblemGeometry, params: ModelParams, W: State,
                    dt: float, config: CycleConfig | None = None) -> list:
    """Levels for one Newton iterate: coefficients injected, blocks assembled.

    The iterate (s, c) is copied to each coarser lattice at coincident
    nodes; coarse ghost values are refilled by normal extrapolation from
    the coarse inside nodes.
    """
    config = config or CycleConfig()
    levels = []
    w = W
    for g in geometry_chain(geom):
        if g is not geom:
            idx = _inject_index(levels[-1].geom, g)
            ni = g.classification.n_inside
            s = np.where(idx >= 0, w.s[np.maximum(idx, 0)], 0.0)
            c = np.where(idx >= 0, w.c[np.maximum(idx, 0)], 0.0)
            s = extrapolate_initial_data(s[:ni], g, steps=20)
            c = extrapolate_initial_data(c[:ni], g, steps=20)
            w = State(s, c, W.t)
        blocks = assemble_jacobian(w, params, g, dt)
        vanka = _ghost_block_tables(g, blocks) if config.ghost_blocks else None
        levels.append(MgLevel(g, w, blocks, _tau_rows(g, params, config.tau_s), vanka))
    return levels


def _ghost_block_tables(geom: ProblemGeometry, blocks: JacobianBlocks):
    """Coupled closure-stencil blocks for the boundary relaxation stage.

    For every closure row the unknowns of its interpolation stencil are
    solved simultaneously: the relaxed diagonal update alone contracts the
    closure defect at a rate 1 - tau * w0, and the boxed coefficient w0
    degenerates to zero where the boundary runs nearly parallel to a grid
    line, stalling the whole cycle.  Solving each stencil as one small
    system removes that floor while staying contractive, because the
    strong closure/interior couplings sit inside the directly inverted
    block.  Returns (ptr, nodes, inv, sizes) with inv padded to 9x9.
    """
    stencils = geom.closures.stencil_index
    n_g = stencils.shape[0]
    ptr = np.zeros(n_g + 1, dtype=np.int64)
    node_lists = []
    for g in range(n_g):
        nodes = np.unique(stencils[g])
        node_lists.append(nodes[nodes >= 0])
        ptr[g + 1] = ptr[g] + node_lists[-1].size
    flat = np.concatenate(node_lists) if node_lists else np.zeros(0, dtype=np.int64)
    inv = np.zeros((n_g, 9, 9))
    sizes = np.diff(ptr)
    for g, nodes in enumerate(node_lists):
        k = nodes.size
        sub = np.zeros((k, k))
        pos = {int(q): a for a, q in enumerate(nodes)}
        for a, q in enumerate(nodes):
            for t in range(9):
                b = pos.get(int(blocks.ss_cols[q, t]))
                if b is not None:
                    sub[a, b] += blocks.ss_vals[q, t]
        inv[g, :k, :k] = np.linalg.inv(sub)
    return ptr, flat, inv, sizes


# ---------------------------------------------------------------------------
# smoothing

@njit(cache=True)
def _block_pass(ptr, nodes, inv, sizes, ss_cols, ss_vals, sc_cols, sc_vals,
                rhs_s, ds, dc):
    for g in range(sizes.shape[0]):
        k = sizes[g]
        base = ptr[g]
        r = np.zeros(9)
        for a in range(k):
            q = nodes[base + a]
            acc = 0.0
            for t in range(9):
                acc += ss_vals[q, t] * ds[ss_cols[q, t]]
            for t in range(5):
                acc += sc_vals[q, t] * dc[sc_cols[q, t]]
            r[a] = rhs_s[q] - acc
        for a in range(k):
            upd = 0.0
            for t in range(k):
                upd += inv[g, a, t] * r[t]
            ds[nodes[base + a]] += upd


@njit(cache=True)
def _gs_sweep(ni, ss_cols, ss_vals, sc_cols, sc_vals, cs, cc, tau,
              rhs_s, rhs_c, ds, dc):
    n = cs.shape[0]
    for r in range(n):
        acc = 0.0
        for k in range(9):
            acc += ss_vals[r, k] * ds[ss_cols[r, k]]
        for k in range(5):
            acc += sc_vals[r, k] * dc[sc_cols[r, k]]
        res_s = rhs_s[r] - acc
        if r < ni:
            a = ss_vals[r, 0]
            b = sc_vals[r, 0]
            e = cs[r]
            d = cc[r]
            res_c = rhs_c[r] - e * ds[r] - d * dc[r]
            det = a * d - b * e
            if abs(det) < 1.0e-14 * (a * a + b * b + e * e + d * d):
                return r
            ds[r] += (d * res_s - b * res_c) / det
            dc[r] += (a * res_c - e * res_s) / det
        else:
            # closure row: J_rr is the negated boxed coefficient, so the
            # contractive relaxed update subtracts tau times the defect
            ds[r] -= tau[r - ni] * res_s
            if cc[r] == 0.0:
                return r
            dc[r] += (rhs_c[r] - cs[r] * ds[r] - cc[r] * dc[r]) / cc[r]
    return -1


def smooth(level: MgLevel, ds, dc, rhs_s, rhs_c, sweeps: int):
    """In-place lexicographic collective Gauss-Seidel sweeps on one level.

    Each sweep is the relaxed lexicographic pass over all rows; when the
    level carries coupled closure-stencil blocks, a boundary block pass
    follows and the closure c rows are re-slaved to the updated s values.
    """
    b = level.blocks
    ni = b.n_inside
    for _ in range(sweeps):
        bad = _gs_sweep(ni, b.ss_cols, b.ss_vals, b.sc_cols, b.sc_vals,
                        b.cs_diag, b.cc_diag, level.tau_row, rhs_s, rhs_c, ds, dc)
        if bad >= 0:
            raise SingularPivotError(bad, "during relaxation sweep")
        if level.vanka is not None:
            ptr, nodes, inv, sizes = level.vanka
            _block_pass(ptr, nodes, inv, sizes, b.ss_cols, b.ss_vals,
                        b.sc_cols, b.sc_vals, rhs_s, ds, dc)
            dc[ni:] = (rhs_c[ni:] - b.cs_diag[ni:] * ds[ni:]) / b.cc_diag[ni:]
    return ds, dc


# ---------------------------------------------------------------------------
# transfer operators

_FW = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0


def _fold_patch(include: np.ndarray) -> np.ndarray:
    """Full-weighting weights on a 3x3 patch with excluded nodes folded in.

    Weights of excluded nodes are redistributed so that the total stays 1:
    fully excluded columns fold onto the opposite column, then fully
    excluded rows onto the opposite row; leftover excluded cells go to the
    nearest included neighbour in their row, then in their column, then to
    the centre.  ``include[di+1, dj+1]`` flags fine node (2I+di, 2J+dj).
    """
    w = _FW.copy()
    for c in (0, 2):
        if not include[:, c].any():
            w[:, 2 - c] += w[:, c]
            w[:, c] = 0.0
    for r in (0, 2):
        if not include[r, :].any():
            w[2 - r, :] += w[r, :]
            w[r, :] = 0.0
    for r in range(3):
        for c in range(3):
            if include[r, c] or w[r, c] == 0.0:
                continue
            row_targets = [(r, cc) for cc in sorted(range(3), key=lambda x: abs(x - c))
                           if cc != c]
            col_targets = [(rr, c) for rr in sorted(range(3), key=lambda x: abs(x - r))
                           if rr != r]
            for tr, tc in row_targets + col_targets + [(1, 1)]:
                if include[tr, tc]:
                    w[tr, tc] += w[r, c]
                    w[r, c] = 0.0
                    break
    w[~include] = 0.0
    return w


def _restriction_matrix(coarse: ProblemGeometry, fine: ProblemGeometry,
                        which: str) -> sp.csr_matrix:
    """Sparse map from the full fine lattice to the coarse active vector.

    which = "s": interior coarse rows read fine inside values only, coarse
    closure rows read fine outside values only; which = "c": all rows read
    fine active values.
    """
    nf = fine.grid.intervals
    cls_f = fine.classification
    cls_c = coarse.classification
    inside = cls_f.inside_mask
    active = inside | cls_f.ghost_mask

    rows, cols, vals = [], [], []
    for r, (ic, jc) in enumerate(cls_c.nodes):
        fi, fj = 2 * ic, 2 * jc
        include = np.zeros((3, 3), dtype=bool)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ii, jj = fi + di, fj + dj
                if not (0 <= ii <= nf and 0 <= jj <= nf):
                    continue
                if which == "c":
                    include[di + 1, dj + 1] = active[ii, jj]
                elif r < cls_c.n_inside:
                    include[di + 1, dj + 1] = inside[ii, jj]
                else:
                    include[di + 1, dj + 1] = not inside[ii, jj]
        w = _fold_patch(include)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                wv = w[di + 1, dj + 1]
                if wv != 0.0:
                    rows.append(r)
                    cols.append((fi + di) * (nf + 1) + (fj + dj))
                    vals.append(wv)
    return sp.csr_matrix((vals, (rows, cols)),
                         shape=(cls_c.n_active, (nf + 1) ** 2))


def _prolongation_matrix(fine: ProblemGeometry, coarse: ProblemGeometry) -> sp.csr_matrix:
    """Bilinear interpolation from coarse active to fine active nodes.

    Errors are smooth across the boundary, so every available coarse parent
    contributes; weights are renormalised when a parent is inactive.
    """
    cls_f = fine.classification
    idx_c = coarse.classification.index
    nc = coarse.grid.intervals
    rows, cols, vals = [], [], []
    for r, (i, j) in enumerate(cls_f.nodes):
        i0, j0 = i // 2, j // 2
        parents = []
        for pi in {i0, (i + 1) // 2}:
            for pj in {j0, (j + 1) // 2}:
                if 0 <= pi <= nc and 0 <= pj <= nc and idx_c[pi, pj] >= 0:
                    parents.append(idx_c[pi, pj])
        if not parents:
            continue
        wv = 1.0 / len(parents)
        for p in parents:
            rows.append(r)
            cols.append(p)
            vals.append(wv)
    return sp.csr_matrix((vals, (rows, cols)),
                         shape=(cls_f.n_active, coarse.classification.n_active))


def _grid_normal_tables(geom: ProblemGeometry):
    """Upwind neighbour tables on the full lattice for defect extension."""
    tab = getattr(geom, "_mg_extension", None)
    if tab is not None:
        return tab
    v = geom.phi.values
    h = geom.grid.h
    gx, gy = np.gradient(v, h, h)
    norm = np.hypot(gx, gy)
    norm[norm == 0.0] = 1.0
    nx, ny = gx / norm, gy / norm
    n = geom.grid.intervals
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    mx = np.where(nx < 0, -1, 1)
    my = np.where(ny < 0, -1, 1)
    upi = np.clip(ii - mx, 0, n)
    upj = np.clip(jj - my, 0, n)
    inactive = ~(geom.classification.inside_mask | geom.classification.ghost_mask)
    tab = {"wx": np.abs(nx), "wy": np.abs(ny),
           "ii": ii, "jj": jj, "upi": upi, "upj": upj, "inactive": inactive}
    object.__setattr__(geom, "_mg_extension", tab)
    return tab


def extend_defect_outward(geom: ProblemGeometry, lattice: np.ndarray,
                          steps: int = 4) -> np.ndarray:
    """Transport closure defect values constantly along normals into the
    inactive band (explicit upwind steps of dr/dtau + n . grad r = 0).

    Active lattice entries are left untouched; inactive entries only ever
    read outside values, so the interior defect never leaks through."""
    tab = _grid_normal_tables(geom)
    u = lattice.copy()
    mask = tab["inactive"]
    nu = 0.5
    for _ in range(steps):
        upd = u - nu * (tab["wx"] * (u - u[tab["upi"], tab["jj"]])
                        + tab["wy"] * (u - u[tab["ii"], tab["upj"]]))
        u[mask] = upd[mask]
    return u


def _transfer_cache(fine: ProblemGeometry, coarse: ProblemGeometry):
    cache = getattr(fine, "_mg_transfer", None)
    if cache is None:
        cache = {
            "R_s": _restriction_matrix(coarse, fine, "s"),
            "R_c": _restriction_matrix(coarse, fine, "c"),
            "P": _prolongation_matrix(fine, coarse),
        }
        object.__setattr__(fine, "_mg_transfer", cache)
    return cache


def restrict_defect(fine_level: MgLevel, coarse_level: MgLevel, r_s, r_c):
    """Full-weighting restriction of the two defects to the coarse level."""
    fine, coarse = fine_level.geom, coarse_level.geom
    cache = _transfer_cache(fine, coarse)
    n = fine.grid.intervals
    lat_s = np.zeros((n + 1, n + 1))
    nodes = fine.classification.nodes
    lat_s[nodes[:, 0], nodes[:, 1]] = r_s
    lat_s = extend_defect_outward(fine, lat_s)
    lat_c = np.zeros((n + 1, n + 1))
    lat_c[nodes[:, 0], nodes[:, 1]] = r_c
    return cache["R_s"] @ lat_s.reshape(-1), cache["R_c"] @ lat_c.reshape(-1)


def prolong_error(coarse_level: MgLevel, fine_level: MgLevel, e_s, e_c):
    """Bilinear interpolation of the coarse error to the fine active nodes."""
    cache = _transfer_cache(fine_level.geom, coarse_level.geom)
    return cache["P"] @ e_s, cache["P"] @ e_c


# ---------------------------------------------------------------------------
# cycling

def _defect(level: MgLevel, ds, dc, rhs_s, rhs_c):
    js, jc = level.blocks.matvec(ds, dc)
    return rhs_s - js, rhs_c - jc


def blocks_to_sparse(blocks):
    """Assemble the packed 2n x 2n sparse matrix from the block tables."""
    import scipy.sparse as sp

    n = blocks.n
    rows = np.repeat(np.arange(n), blocks.ss_cols.shape[1])
    a_ss = sp.csr_matrix(
        (blocks.ss_vals.ravel(), (rows, blocks.ss_cols.ravel())),
        shape=(n, n))
    rows = np.repeat(np.arange(n), blocks.sc_cols.shape[1])
    a_sc = sp.csr_matrix(
        (blocks.sc_vals.ravel(), (rows, blocks.sc_cols.ravel())),
        shape=(n, n))
    return sp.bmat([[a_ss, a_sc],
                    [sp.diags(blocks.cs_diag), sp.diags(blocks.cc_diag)]],
                   format="csc")


def _coarse_solve(level: MgLevel, ds, dc, rhs_s, rhs_c, config: CycleConfig):
    """Exact coarsest-level solve via a cached sparse LU factorization.

    The closure smoother is not contractive for every coefficient regime,
    so sweeping to convergence on the coarsest level is not reliable; the
    coarsest system is small and a direct factorization is cheap.
    """
    import scipy.sparse.linalg as spla

    if level.coarse_lu is None:
        try:
            level.coarse_lu = spla.splu(blocks_to_sparse(level.blocks))
        except RuntimeError as err:
            raise LinearSolveFailureError(
                f"coarsest-level factorization failed: {err}")
    rs, rc = _defect(level, ds, dc, rhs_s, rhs_c)
    e = level.coarse_lu.solve(np.concatenate([rs, rc]))
    n = ds.size
    ds += e[:n]
    dc += e[n:]


def _cycle(levels, l, ds, dc, rhs_s, rhs_c, config: CycleConfig):
    level = levels[l]
    if l == len(levels) - 1:
        _coarse_solve(level, ds, dc, rhs_s, rhs_c, config)
        return
    smooth(level, ds, dc, rhs_s, rhs_c, config.nu_pre)
    rs, rc = _defect(level, ds, dc, rhs_s, rhs_c)
    rsc, rcc = restrict_defect(level, levels[l + 1], rs, rc)
    es = np.zeros(levels[l + 1].geom.n_active)
    ec = np.zeros_like(es)
    for _ in range(config.gamma):
        _cycle(levels, l + 1, es, ec, rsc, rcc, config)
    ps, pc = prolong_error(levels[l + 1], level, es, ec)
    ds += ps
    dc += pc
    smooth(level, ds, dc, rhs_s, rhs_c, config.nu_post)


def w_cycle(levels, rhs_s, rhs_c, ds=None, dc=None, config: CycleConfig | None = None):
    """Run W-cycles until the defect inf-norm meets the tolerance.

    Returns (ds, dc, history) where history holds the defect inf-norm
    before the first cycle and after each cycle.
    """
    config = config or CycleConfig()
    n = levels[0].geom.n_active
    ds = np.zeros(n) if ds is None else ds
    dc = np.zeros(n) if dc is None else dc
    rs, rc = _defect(levels[0], ds, dc, rhs_s, rhs_c)
    history = [max(np.abs(rs).max(), np.abs(rc).max())]
    if history[0] < config.tol:
        return ds, dc, history
    for _ in range(config.max_cycles):
        _cycle(levels, 0, ds, dc, rhs_s, rhs_c, config)
        rs, rc = _defect(levels[0], ds, dc, rhs_s, rhs_c)
        history.append(max(np.abs(rs).max(), np.abs(rc).max()))
        if not np.isfinite(history[-1]) or history[-1] > 20.0 * history[0]:
            raise LinearSolveFailureError(
                f"defect diverged during W-cycles "
                f"({history[0]:.3e} -> {history[-1]:.3e})")
        if history[-1] < config.tol:
            break
    if history[-1] > history[0]:
        raise LinearSolveFailureError(
            f"defect grew from {history[0]:.3e} to {history[-1]:.3e}")
    return ds, dc, history


class MultigridSolver:
    """Reusable inner solver bound to one geometry and parameter set."""

    def __init__(self, geom: ProblemGeometry, params: ModelParams, dt: float,
                 config: CycleConfig | None = None):
        self.geom = geom
        self.params = params
        self.dt = dt
        self.config = config or CycleConfig()
        self.levels = None
        self.history_log = None      # set to a list to record every solve

    def update(self, W: State):
        """Re-freeze the hierarchy coefficients at a new Newton iterate."""
        self.levels = build_hierarchy(self.geom, self.params, W, self.dt, self.config)
        return self

    def solve(self, rhs: np.ndarray):
        """Solve J.dW = rhs for the packed correction; returns (dW, history).

        Pure W-cycles are tried first.  Where the boundary closures leave
        the cycle iteration non-contractive (degenerate ghost geometries in
        diffusion-dominated regimes), the cycle is still an excellent
        approximate inverse, so the solve falls back to GMRES with one
        W-cycle as the preconditioner; if the cycle itself breaks down
        (singular relaxation pivots on a degenerate level), a sparse direct
        solve of the finest system is the last resort.
        """
        if self.levels is None:
            raise RuntimeError("call update(W) before solve")
        n = self.geom.n_active
        if len(self.levels) == 1:
            # Coarsening degenerated immediately; the system is small
            # enough to factor outright.
            dW, history = self._direct_solve(rhs)
            if self.history_log is not None:
                self.history_log.append(list(history))
            return dW, history
        try:
            ds, dc, history = w_cycle(self.levels, rhs[:n], rhs[n:],
                                      config=self.config)
            dW = np.concatenate([ds, dc])
            converged = history[-1] < self.config.tol
        except (LinearSolveFailureError, SingularPivotError):
            converged = False
        if not converged:
            try:
                dW, history = self._krylov_solve(rhs)
            except (LinearSolveFailureError, SingularPivotError):
                dW, history = self._direct_solve(rhs)
        if self.history_log is not None:
            self.history_log.append(list(history))
        return dW, history

    def _krylov_solve(self, rhs: np.ndarray):
        """Cycle-preconditioned GMRES for systems where cycles stall."""
        import scipy.sparse.linalg as spla

        n = self.geom.n_active
        levels, config = self.levels, self.config

        def apply_cycle(v):
            ds = np.zeros(n)
            dc = np.zeros(n)
            _cycle(levels, 0, ds, dc, v[:n].copy(), v[n:].copy(), config)
            return np.concatenate([ds, dc])

        blocks = levels[0].blocks
        op = spla.LinearOperator((2 * n, 2 * n),
                                 matvec=blocks.matvec_packed)
        pre = spla.LinearOperator((2 * n, 2 * n), matvec=apply_cycle)
        residuals = []
        x, info = spla.gmres(A=op, b=rhs, M=pre, rtol=1.0e-14,
                             atol=config.tol, restart=40,
                             maxiter=config.krylov_max_restarts,
                             callback=residuals.append,
                             callback_type="pr_norm")
        if info != 0 or not np.all(np.isfinite(x)):
            raise LinearSolveFailureError(
                f"preconditioned GMRES did not converge (info={info})")
        history = [float(np.abs(rhs).max())] + [float(r) for r in residuals]
        return x, history

    def _direct_solve(self, rhs: np.ndarray):
        """Sparse LU solve of the packed system on the finest level."""
        import scipy.sparse.linalg as spla

        matrix = blocks_to_sparse(self.levels[0].blocks)
        try:
            x = spla.splu(matrix).solve(rhs)
        except RuntimeError as err:
            raise LinearSolveFailureError(f"direct solve failed: {err}")
        residual_inf = float(np.abs(rhs - matrix @ x).max())
        return x, [float(np.abs(rhs).max()), residual_inf]
