"""Fully discrete residual and Jacobian of the sulfation system.

The unknown at one time level is W = (s, c) over the active nodes (inside
first, then ghosts).  Interior rows carry the Crank-Nicolson finite
difference equations; ghost s-rows carry the boundary condition at the
projected boundary point; c-rows are the reaction ODE discretised on every
active node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .geometry import ProblemGeometry

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


@dataclass
class ModelParams:
    """Physical and boundary data of the gas/carbonate system.

    Porosity is linear by default, porosity(c) = alpha c + beta; pass
    ``porosity_fn``/``dporosity_fn`` to swap in another scalar law.
    """

    a: float = 1.0e4
    d: float = 0.1
    m_s: float = 64.06
    m_c: float = 100.09
    alpha: float = 0.01
    beta: float = 0.1
    s_b: Union[float, Callable] = 1.0
    bc: str = DIRICHLET
    f1: Optional[Callable] = None    # source in the gas equation, f(x, y, t)
    f2: Optional[Callable] = None    # source in the carbonate equation
    porosity_fn: Optional[Callable] = None
    dporosity_fn: Optional[Callable] = None

    def __post_init__(self):
        if min(self.a, self.d, self.m_s, self.m_c) <= 0:
            raise ValueError("a, d, m_s, m_c must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive (porosity at c = 0)")
        if self.bc not in (DIRICHLET, NEUMANN):
            raise ValueError(f"unknown boundary kind {self.bc!r}")

    def porosity(self, c):
        if self.porosity_fn is not None:
            return self.porosity_fn(c)
        return self.alpha * c + self.beta

    def dporosity(self, c):
        if self.dporosity_fn is not None:
            return self.dporosity_fn(c)
        return self.alpha * np.ones_like(np.asarray(c, dtype=float))

    def boundary_value(self, x, y, t):
        if callable(self.s_b):
            return self.s_b(x, y, t)
        return np.full_like(np.asarray(x, dtype=float), self.s_b)


@dataclass
class State:
    """Nodal unknowns (s, c) over the active nodes at time label t."""

    s: np.ndarray
    c: np.ndarray
    t: float = 0.0

    def copy(self) -> "State":
        return State(self.s.copy(), self.c.copy(), self.t)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.s, self.c])


def _tables(geom: ProblemGeometry):
    """Neighbour/coordinate tables, built once per geometry."""
    tab = getattr(geom, "_disc_tables", None)
    if tab is not None:
        return tab
    cls = geom.classification
    ni = cls.n_inside
    nodes = cls.nodes
    neigh = np.empty((ni, 4), dtype=np.int64)
    offs = ((1, 0), (-1, 0), (0, 1), (0, -1))
    for k, (di, dj) in enumerate(offs):
        neigh[:, k] = cls.index[nodes[:ni, 0] + di, nodes[:ni, 1] + dj]
    if (neigh < 0).any():
        raise AssertionError("inside node with inactive axis neighbour")
    x, y = geom.grid.coordinate(nodes[:, 0], nodes[:, 1])
    tab = {"neigh": neigh, "x": np.asarray(x, float), "y": np.asarray(y, float)}
    object.__setattr__(geom, "_disc_tables", tab)
    return tab


def _spatial_ops(s, c, params: ModelParams, geom: ProblemGeometry):
    """Discrete operators L^s (inside rows) and L^c (all active rows)."""
    tab = _tables(geom)
    ni = geom.classification.n_inside
    h = geom.grid.h
    p = params.porosity(c)
    lc = -(params.a / params.m_s) * p * s * c
    nb = tab["neigh"]
    flux = ((p[nb] + p[:ni, None]) * (s[nb] - s[:ni, None])).sum(axis=1)
    ls = -(params.a / params.m_c) * p[:ni] * s[:ni] * c[:ni] \
        + params.d / (2.0 * h * h) * flux
    return ls, lc


def _source(fn, x, y, t0, t1):
    if fn is None:
        return 0.0
    return 0.5 * (fn(x, y, t0) + fn(x, y, t1))


def residual(W_next: State, W_prev: State, params: ModelParams,
             geom: ProblemGeometry, dt: float) -> np.ndarray:
    """Nonlinear residual F(W_next) of one Crank-Nicolson step, length 2n."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = geom.n_active
    if W_next.s.shape != (n,) or W_prev.s.shape != (n,):
        raise ValueError("state size does not match the geometry")
    ni = geom.classification.n_inside
    tab = _tables(geom)
    t0, t1 = W_prev.t, W_next.t

    s0, c0, s1, c1 = W_prev.s, W_prev.c, W_next.s, W_next.c
    p0, p1 = params.porosity(c0), params.porosity(c1)
    ls0, lc0 = _spatial_ops(s0, c0, params, geom)
    ls1, lc1 = _spatial_ops(s1, c1, params, geom)

    fs = np.empty(n)
    fs[:ni] = (p1[:ni] * s1[:ni] - p0[:ni] * s0[:ni]) / dt \
        - 0.5 * (ls0 + ls1) \
        - _source(params.f1, tab["x"][:ni], tab["y"][:ni], t0, t1)

    clo = geom.closures
    bx, by = clo.projections[:, 0], clo.projections[:, 1]
    rows = clo.dirichlet_rows if params.bc == DIRICHLET else clo.neumann_rows
    fs[ni:] = params.boundary_value(bx, by, t1) - (rows * s1[clo.stencil_index]).sum(axis=1)

    fc = (c1 - c0) / dt - 0.5 * (lc0 + lc1) \
        - _source(params.f2, tab["x"], tab["y"], t0, t1)
    return np.concatenate([fs, fc])


@dataclass(frozen=True)
class JacobianBlocks:
    """The four blocks of dF/dW in padded stencil-row form.

    ``ss`` rows hold [diagonal, 4 neighbours, padding] for interior rows and
    the 9 boundary-stencil entries for ghost rows; ``sc`` rows are 5-point on
    interior rows and empty on ghost rows; the cs and cc blocks are diagonal.
    Padding slots have column 0 and value 0.
    """

    n_inside: int
    ss_cols: np.ndarray   # (n, 9)
    ss_vals: np.ndarray
    sc_cols: np.ndarray   # (n, 5)
    sc_vals: np.ndarray
    cs_diag: np.ndarray   # (n,)
    cc_diag: np.ndarray   # (n,)

    @property
    def n(self) -> int:
        return self.cs_diag.shape[0]

    def matvec(self, ds: np.ndarray, dc: np.ndarray):
        """Apply the block operator: returns (J^ss ds + J^sc dc, J^cs ds + J^cc dc)."""
        rs = (self.ss_vals * ds[self.ss_cols]).sum(axis=1) \
            + (self.sc_vals * dc[self.sc_cols]).sum(axis=1)
        rc = self.cs_diag * ds + self.cc_diag * dc
        return rs, rc

    def matvec_packed(self, v: np.ndarray) -> np.ndarray:
        rs, rc = self.matvec(v[: self.n], v[self.n:])
        return np.concatenate([rs, rc])

    def row(self, r: int):
        """Sparse entries of row r of each block as {block: (cols, vals)}."""
        live = self.ss_vals[r] != 0.0
        live[0] = True
        sc_live = self.sc_vals[r] != 0.0
        if r < self.n_inside:
            sc_live[0] = True
        return {
            "ss": (self.ss_cols[r, live], self.ss_vals[r, live]),
            "sc": (self.sc_cols[r, sc_live], self.sc_vals[r, sc_live]),
            "cs": (np.array([r]), self.cs_diag[r: r + 1]),
            "cc": (np.array([r]), self.cc_diag[r: r + 1]),
        }

    def diagonals(self):
        return (self.ss_vals[:, 0].copy(), self.sc_vals[:, 0].copy(),
                self.cs_diag.copy(), self.cc_diag.copy())

    @property
    def boundary_rows(self):
        """Ghost rows of J^ss (the precomputable boundary-condition block)."""
        return (self.ss_cols[self.n_inside:].copy(),
                self.ss_vals[self.n_inside:].copy())


def assemble_jacobian(W: State, params: ModelParams, geom: ProblemGeometry,
                      dt: float) -> JacobianBlocks:
    """Exact derivative of :func:`residual` with respect to W_next."""
    cls = geom.classification
    n, ni = cls.n_active, cls.n_inside
    tab = _tables(geom)
    nb = tab["neigh"]
    h = geom.grid.h
    k = params.d / (4.0 * h * h)

    s1, c1 = W.s, W.c
    p1 = params.porosity(c1)
    dp1 = params.dporosity(c1)

    ss_cols = np.zeros((n, 9), dtype=np.int64)
    ss_vals = np.zeros((n, 9))
    sc_cols = np.zeros((n, 5), dtype=np.int64)
    sc_vals = np.zeros((n, 5))

    ss_cols[:ni, 0] = np.arange(ni)
    ss_cols[:ni, 1:5] = nb
    edge = p1[nb] + p1[:ni, None]
    ss_vals[:ni, 0] = p1[:ni] / dt \
        + params.a / (2.0 * params.m_c) * p1[:ni] * c1[:ni] \
        + k * edge.sum(axis=1)
    ss_vals[:ni, 1:5] = -k * edge

    sc_cols[:ni, 0] = np.arange(ni)
    sc_cols[:ni, 1:5] = nb
    sdiff = s1[:ni, None] - s1[nb]
    sc_vals[:ni, 0] = dp1[:ni] * s1[:ni] / dt \
        + params.a / (2.0 * params.m_c) * (dp1[:ni] * c1[:ni] + p1[:ni]) * s1[:ni] \
        + k * dp1[:ni] * sdiff.sum(axis=1)
    sc_vals[:ni, 1:5] = k * dp1[nb] * sdiff

    clo = geom.closures
    rows = clo.dirichlet_rows if params.bc == DIRICHLET else clo.neumann_rows
    ss_cols[ni:] = clo.stencil_index
    ss_vals[ni:] = -rows

    cs = params.a / (2.0 * params.m_s) * p1 * c1
    cc = 1.0 / dt + params.a / (2.0 * params.m_s) * (dp1 * c1 + p1) * s1
    return JacobianBlocks(ni, ss_cols, ss_vals, sc_cols, sc_vals, cs, cc)


def _grid_normals(geom: ProblemGeometry):
    gy, gx = None, None
    v = geom.phi.values
    h = geom.grid.h
    gx, gy = np.gradient(v, h, h)
    norm = np.hypot(gx, gy)
    norm[norm == 0.0] = 1.0
    return gx / norm, gy / norm


def _extrap_tables(geom: ProblemGeometry):
    tab = getattr(geom, "_extrap_tables", None)
    if tab is not None:
        return tab
    cls = geom.classification
    ni, ng = cls.n_inside, cls.n_ghost
    nxg, nyg = _grid_normals(geom)
    gi = cls.nodes[ni:, 0]
    gj = cls.nodes[ni:, 1]
    nx = nxg[gi, gj]
    ny = nyg[gi, gj]
    mx = np.where(nx < 0, -1, 1)
    my = np.where(ny < 0, -1, 1)

    nmax = geom.grid.intervals
    upx_i = np.clip(gi - mx, 0, nmax)
    upy_j = np.clip(gj - my, 0, nmax)
    upx = cls.index[upx_i, gj]          # -1 where inactive
    upy = cls.index[gi, upy_j]
    self_idx = ni + np.arange(ng)
    wx = np.where(upx >= 0, np.abs(nx), 0.0)
    wy = np.where(upy >= 0, np.abs(ny), 0.0)
    upx = np.where(upx >= 0, upx, self_idx)
    upy = np.where(upy >= 0, upy, self_idx)
    tab = {"wx": wx, "wy": wy, "upx": upx, "upy": upy}
    object.__setattr__(geom, "_extrap_tables", tab)
    return tab


def _normal_derivative_inside(u: np.ndarray, geom: ProblemGeometry) -> np.ndarray:
    """n . grad u at inside nodes, using inside values only (one-sided near
    the boundary, second order where two inward nodes exist)."""
    cls = geom.classification
    ni = cls.n_inside
    h = geom.grid.h
    nmax = geom.grid.intervals
    inside = cls.inside_mask
    ug = cls.scatter(np.where(np.isfinite(u), u, 0.0), fill=0.0)
    nxg, nyg = _grid_normals(geom)

    nodes = cls.nodes[:ni]
    out = np.zeros(ni)
    for axis in (0, 1):
        di, dj = (1, 0) if axis == 0 else (0, 1)
        i, j = nodes[:, 0], nodes[:, 1]

        def ok(ii, jj):
            valid = (ii >= 0) & (ii <= nmax) & (jj >= 0) & (jj <= nmax)
            res = np.zeros(ni, dtype=bool)
            res[valid] = inside[ii[valid], jj[valid]]
            return res

        def val(ii, jj):
            return ug[np.clip(ii, 0, nmax), np.clip(jj, 0, nmax)]

        plus = ok(i + di, j + dj)
        minus = ok(i - di, j - dj)
        plus2 = ok(i + 2 * di, j + 2 * dj)
        minus2 = ok(i - 2 * di, j - 2 * dj)
        u0 = ug[i, j]
        up, um = val(i + di, j + dj), val(i - di, j - dj)
        up2, um2 = val(i + 2 * di, j + 2 * dj), val(i - 2 * di, j - 2 * dj)

        central = (up - um) / (2.0 * h)
        fwd2 = (-3.0 * u0 + 4.0 * up - up2) / (2.0 * h)
        bwd2 = (3.0 * u0 - 4.0 * um + um2) / (2.0 * h)
        fwd1 = (up - u0) / h
        bwd1 = (u0 - um) / h

        d = np.zeros(ni)
        d = np.where(plus, fwd1, d)
        d = np.where(minus, bwd1, d)
        d = np.where(plus & plus2 & ~minus, fwd2, d)
        d = np.where(minus & minus2 & ~plus, bwd2, d)
        d = np.where(plus & minus, central, d)
        comp = nxg if axis == 0 else nyg
        out += comp[nodes[:, 0], nodes[:, 1]] * d
    return out


def _transport_to_ghosts(values: np.ndarray, rhs, geom: ProblemGeometry,
                         steps: int) -> np.ndarray:
    """Relax ghost entries of ``values`` toward the upwind steady state of
    du/dtau + n . grad u = rhs (rhs = 0 extends constantly along normals)."""
    tab = _extrap_tables(geom)
    ni = geom.classification.n_inside
    h = geom.grid.h
    nu = 0.5                       # dtau / h
    u = values.copy()
    wx, wy, upx, upy = tab["wx"], tab["wy"], tab["upx"], tab["upy"]
    r = 0.0 if rhs is None else 0.5 * h * rhs
    for _ in range(steps):
        g = u[ni:]
        g = g - nu * (wx * (g - u[upx]) + wy * (g - u[upy])) + r
        u[ni:] = g
    return u


def extrapolate_initial_data(values: np.ndarray, geom: ProblemGeometry,
                             steps: int = 40) -> np.ndarray:
    """Fill ghost entries of a field given on inside nodes, second order.

    Two upwind-transport sweeps: the inside normal derivative is extended
    constantly along the outward normal, then the values themselves are
    extended linearly (n . grad u = extended derivative).  Inside entries are
    returned untouched.
    """
    cls = geom.classification
    ni = cls.n_inside
    u = np.asarray(values, dtype=float).copy()
    if u.shape[0] == ni:
        u = np.concatenate([u, np.zeros(cls.n_ghost)])
    if u.shape[0] != cls.n_active:
        raise ValueError("field must cover the inside or the active nodes")

    un = np.zeros(cls.n_active)
    un[:ni] = _normal_derivative_inside(u, geom)
    un = _transport_to_ghosts(un, None, geom, steps)

    tab = _extrap_tables(geom)
    seed = u.copy()
    seed[ni:] = u[tab["upx"]]      # first-order start for the value sweep
    out = _transport_to_ghosts(seed, un[ni:], geom, steps)
    out[:ni] = np.asarray(values, dtype=float)[:ni]
    return out
