"""Monotone fixed points for ``u_t + f(t, x, u) . grad u + g(t, x, u) = 0``, ``u(T) = u_T``.

For a frozen iterate ``u`` the map ``S`` solves the linear transport problem
with field ``b = f(t, x, u)`` and source ``g(t, x, u)``. Under the sign
conditions on ``f`` and ``g``, ``S`` is order preserving on the lattice of
functions that are decreasing in ``x``, and iterating it from the top or the
bottom of the lattice reaches the maximal or minimal solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import GriddedField
from .flow_engine import RegularizedField, trajectories
from .monotone_core import Grid, interpolate, is_decreasing
from .transport import (ResidualReport, TransportProblem, TransportSolution, _snap, solve_transport,
                        subsupersolution_residual)

__all__ = [
    "Nonlinearity",
    "LatticeIterate",
    "ExtremalResult",
    "CharacteristicsBundle",
    "LatticeMaxResult",
    "burgers",
    "fixed_point_map",
    "solve_extremal",
    "lattice_max",
    "extract_characteristics",
]


@dataclass
class Nonlinearity:
    """Coefficients ``f(t, x, u) -> (N, d)`` and ``g(t, x, u) -> (N, m)`` on point arrays.

    ``C0`` bounds the negative parts of ``d_{x_i} f^i`` and ``d_{u_k} g^k``.
    """

    f: Callable
    g: Callable | None
    dim: int = 1
    m: int = 1
    C0: float = 0.0
    name: str = "nonlinearity"

    def f_eval(self, t, x, u):
        return np.asarray(self.f(t, x, u), dtype=float).reshape(-1, self.dim)

    def g_eval(self, t, x, u):
        if self.g is None:
            return np.zeros((x.shape[0], self.m))
        return np.asarray(self.g(t, x, u), dtype=float).reshape(-1, self.m)

    def validate(self, t: float, grid: Grid, u_values, atol: float = 1e-9) -> None:
        """Finite-difference check of the sign conditions on ``grid x u_values``."""
        x = grid.points()
        us = np.asarray(u_values, dtype=float).reshape(-1, self.m)
        for j in range(self.dim):
            dx = np.zeros(self.dim)
            dx[j] = grid.spacing[j]
            for u in us:
                uu = np.broadcast_to(u, (x.shape[0], self.m))
                df = (self.f_eval(t, x + dx, uu) - self.f_eval(t, x, uu)) / dx[j]
                dg = (self.g_eval(t, x + dx, uu) - self.g_eval(t, x, uu)) / dx[j]
                lower = np.zeros(self.dim)
                lower[j] = -self.C0
                if np.any(df < lower - atol):
                    raise ValueError("d_x f violates the lower bound")
                if np.any(dg > atol):
                    raise ValueError("g must be decreasing in x")
        if len(us) > 1:
            for k in range(self.m):
                du = np.zeros(self.m)
                du[k] = max(float(np.ptp(us[:, k])) / 8.0, 1e-6)
                for u in us:
                    uu = np.broadcast_to(u, (x.shape[0], self.m))
                    df = (self.f_eval(t, x, uu + du) - self.f_eval(t, x, uu)) / du[k]
                    dg = (self.g_eval(t, x, uu + du) - self.g_eval(t, x, uu)) / du[k]
                    lower = np.zeros(self.m)
                    lower[k] = -self.C0
                    if np.any(df > atol):
                        raise ValueError("f must be decreasing in u")
                    if np.any(dg < lower - atol):
                        raise ValueError("d_u g violates the lower bound")


def burgers() -> Nonlinearity:
    """``f = -u``, ``g = 0``: ``-u_t + u u_x = 0`` backward in time."""
    return Nonlinearity(lambda t, x, u: -u, None, dim=1, m=1, C0=0.0, name="burgers")


@dataclass
class LatticeIterate:
    """Slices ``values[k] = u(times[k], .)`` with ``times[-1] = T``."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    iteration: int = 0
    direction: str = "from_top"

    @property
    def m(self) -> int:
        return 1 if self.values.ndim == self.grid.dim + 1 else self.values.shape[-1]

    def components(self) -> np.ndarray:
        return self.values[..., None] if self.values.ndim == self.grid.dim + 1 else self.values

    def in_lattice(self, bound: float | None = None, atol: float = 1e-12) -> bool:
        comp = self.components()
        ok = all(is_decreasing(comp[k], dim=self.grid.dim, atol=atol) for k in range(len(self.times)))
        if bound is not None:
            r = np.linalg.norm(self.grid.points(), axis=1).reshape(self.grid.shape)
            ok = ok and bool(np.all(np.abs(comp).max(axis=-1) <= bound * (1.0 + r)[None] + atol))
        return ok

    def l1_distance(self, other: LatticeIterate) -> np.ndarray:
        diff = np.abs(self.components() - other.components())
        return diff.reshape(len(self.times), -1).sum(axis=1) * self.grid.cell_volume

    def as_solution(self) -> TransportSolution:
        return TransportSolution(self.grid, self.times, self.values, provenance="fixed_point")


def _frozen(u: LatticeIterate, nl: Nonlinearity):
    """Gridded field ``f(t, x, u)`` and source slices ``g(t, x, u) + C0 u``."""
    grid = u.grid
    x = grid.points()
    comp = u.components()
    bs, ds = [], []
    for k, t in enumerate(u.times):
        uk = comp[k].reshape(-1, nl.m)
        bs.append(nl.f_eval(float(t), x, uk).reshape(grid.shape + (nl.dim,)))
        ds.append((nl.g_eval(float(t), x, uk) + nl.C0 * uk).reshape(grid.shape + (nl.m,)))
    b = GriddedField.from_slices(grid, u.times, np.stack(bs), C0=1.0, C1=nl.C0, name=f"{nl.name}-frozen")
    dslices = np.stack(ds)
    return b, dslices


def _problem(u: LatticeIterate, nl: Nonlinearity, u_T, T: float) -> TransportProblem:
    b, dslices = _frozen(u, nl)
    scalar = u.values.ndim == u.grid.dim + 1
    has_source = nl.g is not None or nl.C0 != 0.0
    d = None
    if has_source:
        def d(t, x):
            vals = interpolate(u.grid, dslices[b.slice_index(t)], x)
            return vals[..., 0] if scalar else vals
    c = -nl.C0 if nl.C0 else None
    return TransportProblem(b, u_T, T=T, c=c, d=d)


def fixed_point_map(u: LatticeIterate, nl: Nonlinearity, u_T: Callable, T: float | None = None,
                    variant: str = "limit", check: bool = True) -> LatticeIterate:
    """``S(u)``: solve the transport problem with coefficients frozen at ``u``.

    The frozen problem is ``-v_t - f(u) . grad v + C0 v - (g(u) + C0 u) = 0``,
    whose source is increasing in ``u``; at a fixed point ``v = u`` it is the
    original equation.

    Raises
    ------
    ValueError
        If ``u`` is not decreasing in ``x`` at some slice.
    """
    if check and not u.in_lattice(atol=1e-9):
        raise ValueError("iterate is not in the lattice (some slice is not decreasing)")
    T = float(u.times[-1]) if T is None else T
    prob = _problem(u, nl, u_T, T)
    sol = solve_transport(prob, u.grid, u.times, variant=variant)
    return LatticeIterate(u.grid, u.times, sol.values, u.iteration + 1, u.direction)


@dataclass
class ExtremalResult:
    solution: LatticeIterate
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    fixed_point_residual: float = np.inf
    monotone: bool = True


def solve_extremal(nl: Nonlinearity, u_T: Callable, grid: Grid, times, direction: str = "from_top",
                   max_iter: int = 20, tol: float | None = None, variant: str = "limit") -> ExtremalResult:
    """Iterate ``S`` from the top (``max u_T``) or bottom (``min u_T``) of the lattice.

    Stops when successive iterates differ by less than ``tol`` in L1 on every
    slice (default ``1e-3`` times the box volume). ``history`` records the
    largest per-slice L1 increment of each iteration; ``monotone`` reports
    whether the iterates were ordered as the lattice argument predicts.
    """
    if direction not in ("from_top", "from_bottom"):
        raise ValueError("direction must be 'from_top' or 'from_bottom'")
    times = np.asarray(times, dtype=float)
    T = float(times[-1])
    box = float(np.prod(np.asarray(grid.upper) - np.asarray(grid.origin)))
    tol = 1e-3 * box if tol is None else tol
    uT = np.asarray(u_T(grid.points()), dtype=float)
    level = uT.max(axis=0) if direction == "from_top" else uT.min(axis=0)
    shape = (times.size,) + grid.shape + (() if uT.ndim == 1 else (uT.shape[1],))
    u = LatticeIterate(grid, times, np.broadcast_to(level, shape).copy(), 0, direction)
    history, monotone = [], True
    converged = False
    for _ in range(max_iter):
        v = fixed_point_map(u, nl, u_T, T, variant)
        step = u.l1_distance(v)
        history.append(float(step.max()))
        delta = v.components() - u.components()
        if direction == "from_top" and np.any(delta > 1e-9):
            monotone = False
        if direction == "from_bottom" and np.any(delta < -1e-9):
            monotone = False
        u = v
        if step.max() < tol:
            converged = True
            break
    res = float(u.l1_distance(fixed_point_map(u, nl, u_T, T, variant)).max())
    return ExtremalResult(u, len(history), converged and res < tol, history, res, monotone)


@dataclass
class LatticeMaxResult:
    values: LatticeIterate
    report: ResidualReport
    ok: bool


def lattice_max(u: LatticeIterate, v: LatticeIterate, nl: Nonlinearity, u_T: Callable, eps: float,
                max_violation: float = 0.0) -> LatticeMaxResult:
    """Node-wise maximum of two subsolutions, re-checked as a subsolution.

    The sub-residual is evaluated with coefficients frozen at the maximum.
    ``ok`` is true when the violation fraction is at most ``max_violation``.
    """
    if u.grid != v.grid or not np.allclose(u.times, v.times):
        raise ValueError("iterates must share grid and times")
    w = LatticeIterate(u.grid, u.times, np.maximum(u.values, v.values), 0, u.direction)
    prob = _problem(w, nl, u_T, float(u.times[-1]))
    rep = subsupersolution_residual(w.as_solution(), prob, eps, "sub")
    return LatticeMaxResult(w, rep, rep.violation <= max_violation)


@dataclass
class CharacteristicsBundle:
    """``X[k] = X_{times[k], t}(points)``, ``U[k] = u(times[k], X[k])``.

    ``backward_residual`` is the largest ``|-dU/ds - g(s, X, U)|`` over
    interior steps (centered differences); ``terminal_defect`` is the largest
    ``|U_T - u_T(X_T)|``.
    """

    t: float
    times: np.ndarray
    points: np.ndarray
    X: np.ndarray
    U: np.ndarray
    backward_residual: float
    terminal_defect: float


def extract_characteristics(u: LatticeIterate, nl: Nonlinearity, u_T: Callable, t: float, points=None,
                            variant: str = "limit") -> CharacteristicsBundle:
    """Forward characteristics of a fixed point from time ``t``.

    ``X`` follows ``f(s, X, u(s, X))`` (the frozen field), ``U`` reads ``u``
    along ``X``.
    """
    grid = u.grid
    times = u.times[u.times >= t - 1e-12]
    pts = grid.points() if points is None else np.asarray(points, dtype=float).reshape(-1, grid.dim)
    b, _ = _frozen(u, nl)
    side = None if variant == "limit" else {"maximal": "upper", "minimal": "lower"}[variant]
    reg = RegularizedField(b, grid, side, 2.0 * max(grid.spacing) if side else None)
    vmax = max(max(reg.sup_norm(float(s)) for s in times), 1e-12)
    dt = min(grid.spacing) / (2.0 * vmax)
    X = trajectories(reg, pts, float(times[0]), times, dt)
    X = np.stack([_snap(grid, x) for x in X])
    comp = u.components()
    idx = [int(np.argmin(np.abs(u.times - s))) for s in times]
    U = np.stack([interpolate(grid, comp[i], X[k]).reshape(len(pts), -1) for k, i in enumerate(idx)])
    if len(times) > 2:
        dU = np.gradient(U, times, axis=0)
        g = np.stack([nl.g_eval(float(s), X[k], U[k]) for k, s in enumerate(times)])
        resid = float(np.max(np.abs(-dU - g)[1:-1]))
    else:
        resid = 0.0
    uT = np.asarray(u_T(X[-1]), dtype=float).reshape(len(pts), -1)
    return CharacteristicsBundle(float(t), times, pts, X, U, resid, float(np.max(np.abs(U[-1] - uT))))
