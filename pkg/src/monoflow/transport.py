"""Nonconservative transport equations ``-u_t - b . grad u - c u - d = 0`` on ``[0, T]``.

Solutions are assembled from the forward flow started at ``(t, x)``::

    u(t, x) = u_T(X_T) exp(int_t^T c) + int_t^T d(s, X_s) exp(int_t^s c) ds

where ``X`` is the flow of ``b`` from ``x`` at time ``t``. The coefficient ``c``
depends on time only, ``d`` may depend on space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad as _scalar_quad

from .fields import GriddedField, VelocityField, _as_profile
from .flow_engine import RegularizedField, _default_field_grid, trajectories
from .monotone_core import Grid, GridFunction, interpolate, is_decreasing, is_increasing
from .regularize import MollifierKernel, convolve_values

__all__ = [
    "TransportProblem",
    "TransportSolution",
    "ResidualReport",
    "solve_transport",
    "subsupersolution_residual",
    "comparison_gap",
    "renormalize",
    "lp_norm",
]


@dataclass
class TransportProblem:
    """Terminal-value transport problem.

    Parameters
    ----------
    b : VelocityField
    u_T : callable or GridFunction
        Terminal datum; a callable takes ``(N, d)`` points and returns ``(N,)``
        or ``(N, m)`` values.
    T : float
        Terminal time.
    c : float or callable of t, optional
        Zeroth-order coefficient (time only).
    d : callable ``(t, x) -> (N,)`` or ``(N, m)``, optional
        Source term, decreasing in ``x`` for the comparison theory.
    """

    b: VelocityField
    u_T: Callable | GridFunction
    T: float = 1.0
    c: float | Callable | None = None
    d: Callable | None = None

    def terminal(self, x: np.ndarray) -> np.ndarray:
        if isinstance(self.u_T, GridFunction):
            return self.u_T(x)
        return np.asarray(self.u_T(x), dtype=float)

    def c_integral(self, s: float) -> float:
        """``Gamma(s) = int_0^s c``."""
        if self.c is None:
            return 0.0
        if not callable(self.c):
            return float(self.c) * s
        return float(_scalar_quad(self.c, 0.0, s, limit=200)[0])

    def c_at(self, t: float) -> float:
        return 0.0 if self.c is None else float(_as_profile(self.c)(t))


@dataclass
class TransportSolution:
    """Slices ``values[k] = u(times[k], .)`` on ``grid``."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray
    provenance: str = "flow_composition"
    info: dict = field(default_factory=dict)

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t:g} is not stored")
        return k

    def slice(self, t: float) -> GridFunction:
        return GridFunction(self.grid, self.values[self.index(t)])

    def __call__(self, t: float, x) -> np.ndarray:
        return interpolate(self.grid, self.values[self.index(t)], x)

    def slices_decreasing(self, atol: float = 1e-12) -> bool:
        return all(is_decreasing(v, dim=self.grid.dim, atol=atol) for v in self.values)

    def slices_increasing(self, atol: float = 1e-12) -> bool:
        return all(is_increasing(v, dim=self.grid.dim, atol=atol) for v in self.values)


def _flow_rhs(b: VelocityField, grid: Grid, T: float, times, variant: str, eps, field_grid):
    if variant not in ("limit", "maximal", "minimal"):
        raise ValueError(f"unknown flow variant {variant!r}")
    side = {"limit": None, "maximal": "upper", "minimal": "lower"}[variant]
    if side is not None and eps is None:
        eps = 2.0 * max(grid.spacing)
    if field_grid is None and not isinstance(b, GriddedField):
        field_grid = _default_field_grid(b, grid, float(np.min(times)), T, eps)
    reg = RegularizedField(b, field_grid, side, eps)
    return reg, eps


def _snap(grid: Grid, x: np.ndarray, rel: float = 1e-8) -> np.ndarray:
    """Round coordinates lying within ``rel * h`` of a grid line onto it.

    Endpoints that should sit exactly on a jump of a step datum otherwise
    land on either side by rounding.
    """
    h = np.asarray(grid.spacing)
    o = np.asarray(grid.origin)
    k = np.rint((x - o) / h)
    node = o + k * h
    return np.where(np.abs(x - node) <= rel * h, node, x)


def solve_transport(p: TransportProblem, grid: Grid, times, variant: str = "limit", eps: float | None = None,
                    dt: float | None = None, field_grid: Grid | None = None, validate: bool = True
                    ) -> TransportSolution:
    """Flow-composition solution at every node of ``grid`` and every time in ``times``.

    Parameters
    ----------
    variant : {"limit", "maximal", "minimal"}
        Which flow carries the characteristics. ``"limit"`` interpolates the
        tabulated field without regularization; ``"maximal"``/``"minimal"``
        use the sup/inf-convolved field of width ``eps`` (default ``2 h``).
    dt : float, optional
        RK4 step; defaults to the CFL bound of the chosen variant.

    Raises
    ------
    ValueError
        If ``b`` fails its growth/monotonicity check or ``dt`` violates the
        CFL bound.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    T = float(p.T)
    if np.any(times > T + 1e-12) or np.any(times < 0):
        raise ValueError("solution times must lie in [0, T]")
    reg, eps = _flow_rhs(p.b, grid, T, times, variant, eps, field_grid)
    if validate and not isinstance(p.b, GriddedField):
        check_times = [0.0] if p.b.autonomous else np.unique(np.concatenate([times, [T]]))
        for t in check_times:
            p.b.validate(float(t), reg.grid, atol=1e-9)
    vmax = max(max(reg.sup_norm(float(t)) for t in np.unique(np.concatenate([times, [T]]))), 1e-12)
    width = eps if variant != "limit" else min(reg.grid.spacing)
    dt_max = width / (2.0 * vmax)
    if dt is None:
        dt = dt_max
    elif dt > dt_max * (1 + 1e-9):
        raise ValueError(f"CFL violation: dt={dt:g} exceeds {dt_max:g}")

    nodes = grid.points()
    n = nodes.shape[0]
    x0 = np.tile(nodes, (times.size, 1))
    starts = np.repeat(times, n)
    probe = np.asarray(p.terminal(nodes[:1]))
    comp = probe.shape[1:] if probe.ndim > 1 else ()
    if p.d is None:
        xt = trajectories(reg, x0, float(times.min()), [T], dt, starts=starts)
        source = 0.0
    else:
        def integrand(t, x, active):
            vals = np.asarray(p.d(t, x), dtype=float).reshape((x.shape[0],) + comp)
            w = np.exp(p.c_integral(t))
            return vals * w
        xt, qt = trajectories(reg, x0, float(times.min()), [T], dt, starts=starts, quad=integrand, quad_shape=comp)
        gam = np.array([p.c_integral(float(t)) for t in times])
        source = qt[0] * np.repeat(np.exp(-gam), n).reshape((-1,) + (1,) * len(comp))
    xT = _snap(grid, xt[0])
    growth = np.repeat(np.exp([p.c_integral(T) - p.c_integral(float(t)) for t in times]), n)
    term = np.asarray(p.terminal(xT), dtype=float).reshape((x0.shape[0],) + comp)
    u = term * growth.reshape((-1,) + (1,) * len(comp)) + source
    values = u.reshape((times.size,) + grid.shape + comp)
    prov = "flow_composition" if variant == "limit" else f"regularized({eps:g})"
    return TransportSolution(grid, times, values, provenance=prov,
                             info={"variant": variant, "eps": eps, "dt": dt, "T": T})


@dataclass
class ResidualReport:
    """Discrete residual of the mollified solution and its sign violations.

    ``violation`` is the fraction of judged space-time nodes (interior, and
    away from the clamped extension of the grid) where the
    residual has the wrong sign by more than ``tolerance``.
    """

    residual: np.ndarray
    tolerance: np.ndarray
    violation: float
    side: str
    eps: float


def _c1_removal(sol: TransportSolution, p: TransportProblem):
    """Change of variables ``u~(t, x) = u(t, a(t) x)``, ``a = exp(omega1(T) - omega1(t))``.

    Returns transformed slices, the matching field and source evaluators,
    and the per-slice scale ``a``; the new field ``b(t, a x) / a + C1(t) x``
    is increasing.
    """
    c1 = _as_profile(p.b.C1)
    T = float(p.T)
    grid = sol.grid
    nodes = grid.points()
    a = np.array([np.exp(p.b.omega1(T, float(t))) for t in sol.times])
    vals = np.stack([interpolate(grid, v, nodes * ak).reshape(v.shape) for v, ak in zip(sol.values, a)])

    def b_new(k, x):
        t = float(sol.times[k])
        return p.b(t, x * a[k]) / a[k] + c1(t) * x

    def d_new(k, x):
        return None if p.d is None else np.asarray(p.d(float(sol.times[k]), x * a[k]), dtype=float)

    return vals, b_new, d_new, a


def subsupersolution_residual(u: TransportSolution, p: TransportProblem, eps: float, side: str,
                              tol_factor: float = 10.0) -> ResidualReport:
    """Residual ``-dt w - b . grad w - c w - d`` of the one-sided mollification ``w`` of ``u``.

    ``side="super"`` mollifies with the kernel supported in ``(0, 2 eps)^d``
    and expects a residual ``>= 0``; ``side="sub"`` uses the mirrored kernel
    and expects ``<= 0``. Time derivatives are centered (one-sided at the
    ends); space derivatives are upwind along ``b``. When ``C1 != 0`` the
    problem is first transformed so that the field is increasing. Default
    tolerance is ``10 (h + dt) (1 + |b|)``.
    """
    if side not in ("sub", "super"):
        raise ValueError("side must be 'sub' or 'super'")
    grid = u.grid
    kernel = MollifierKernel(eps, "lower" if side == "super" else "upper")
    kernel.steps(min(grid.spacing))
    if u.values.ndim != grid.dim + 1:
        raise ValueError("residuals are computed for scalar solutions")
    nonzero_c1 = any(_as_profile(p.b.C1)(float(t)) != 0.0 for t in u.times)
    scale = np.ones(u.times.size)
    if nonzero_c1:
        vals, b_eval, d_eval, scale = _c1_removal(u, p)
    else:
        vals = u.values

        def b_eval(k, x):
            return p.b(float(u.times[k]), x)

        def d_eval(k, x):
            return None if p.d is None else np.asarray(p.d(float(u.times[k]), x), dtype=float)

    w = np.stack([convolve_values(v, grid.dim, grid.spacing, kernel) for v in vals])
    if u.times.size < 2:
        raise ValueError("at least two time slices are required")
    wt = np.gradient(w, u.times, axis=0)
    nodes = grid.points()
    res = np.empty_like(w)
    tol = np.empty_like(w)
    dtmax = float(np.max(np.diff(u.times)))
    h = max(grid.spacing)
    for k in range(u.times.size):
        bv = b_eval(k, nodes).reshape(grid.shape + (grid.dim,))
        adv = np.zeros(grid.shape)
        for j in range(grid.dim):
            hj = grid.spacing[j]
            fwd = np.diff(w[k], axis=j, append=np.take(w[k], [-1], axis=j)) / hj
            bwd = np.diff(w[k], axis=j, prepend=np.take(w[k], [0], axis=j)) / hj
            bj = bv[..., j]
            adv += bj * np.where(bj > 0, fwd, bwd)
        r = -wt[k] - adv - p.c_at(float(u.times[k])) * w[k]
        dv = d_eval(k, nodes)
        if dv is not None:
            r = r - dv.reshape(grid.shape)
        res[k] = r
        tol[k] = tol_factor * (h + dtmax) * (1.0 + np.linalg.norm(bv, axis=-1))
    # nodes whose stencil (or rescaled point) reaches the clamped extension are not judged
    margin = 2.0 * eps + 2.0 * h
    lo, hi = np.asarray(grid.origin) + margin, np.asarray(grid.upper) - margin
    judged = np.stack([np.all((nodes * a >= lo) & (nodes * a <= hi), axis=1).reshape(grid.shape)
                       for a in scale])
    judged &= _interior(grid.shape)[None]
    bad = ((res < -tol) if side == "super" else (res > tol)) & judged
    frac = float(bad.sum() / max(int(judged.sum()), 1))
    return ResidualReport(residual=res, tolerance=tol, violation=frac, side=side, eps=eps)


def _interior(shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(slice(1, -1) for _ in shape)] = True
    return mask


def lp_norm(grid: Grid, values: np.ndarray, radius: float, p: float = 1.0) -> float:
    """``(int_{|x| <= radius} |v|^p)^(1/p)`` by the node quadrature ``h^d sum``."""
    mask = np.linalg.norm(grid.points(), axis=1) <= radius + 1e-12
    v = np.abs(np.asarray(values).reshape(grid.size, -1)).max(axis=1)[mask]
    return float((grid.cell_volume * np.sum(v ** p)) ** (1.0 / p))


def comparison_gap(u_sub: TransportSolution, v_super: TransportSolution, p: TransportProblem, R: float,
                   t: float, power: float = 1.0, reach: float | None = None, growth: float = 0.0) -> float:
    """``int_{B_R} (u - v)_+^p (t) - e^{growth (T - t)} int_{B_{R + reach}} (u - v)_+^p (T)``.

    A nonpositive value certifies the comparison inequality at this
    resolution. ``reach`` defaults to the a priori displacement bound of the
    field over ``[t, T]``; balls are cut to the grid.
    """
    if u_sub.grid != v_super.grid:
        raise ValueError("solutions must share a grid")
    T = float(p.T)
    if reach is None:
        reach = p.b.reach(T, t, R)
    grid = u_sub.grid
    pos = lambda k_u, k_v: np.maximum(u_sub.values[k_u] - v_super.values[k_v], 0.0)
    lhs = lp_norm(grid, pos(u_sub.index(t), v_super.index(t)), R, power) ** power
    rhs = lp_norm(grid, pos(u_sub.index(T), v_super.index(T)), R + reach, power) ** power
    return float(lhs - np.exp(growth * (T - t)) * rhs)


def renormalize(u: TransportSolution, beta: Callable, problem: TransportProblem | None = None,
                grid: Grid | None = None) -> TransportSolution:
    """Apply ``beta`` node-wise; with ``problem`` also solve from ``beta(u_T)`` and record the defect.

    ``info["renormalization_defect"]`` is the largest per-slice L1 distance
    between ``beta(u)`` and the solution with datum ``beta o u_T``. The
    identity only holds without zeroth-order and source terms.
    """
    vals = np.asarray(beta(u.values), dtype=float)
    out = TransportSolution(u.grid, u.times, vals, provenance=u.provenance, info=dict(u.info))
    if problem is not None:
        if problem.c is not None or problem.d is not None:
            raise ValueError("renormalization is checked for problems without c and d")
        composed = TransportProblem(problem.b, lambda x: beta(problem.terminal(x)), T=problem.T)
        ref = solve_transport(composed, u.grid, u.times, variant=u.info.get("variant", "limit"),
                              eps=u.info.get("eps"), dt=u.info.get("dt"))
        diff = np.abs(ref.values - vals).reshape(len(u.times), -1).sum(axis=1) * u.grid.cell_volume
        out.info["renormalization_defect"] = float(diff.max())
    return out
