"""Maximal, minimal and regular Lagrangian flows of admissible velocity fields.

Discontinuous fields are made Lipschitz by tabulating them on a grid and
applying a sup-convolution (upper side) or inf-convolution (lower side) per
component; trajectories of the regularized field are integrated with RK4.
Without regularization (``eps=None``) the tabulated field is only
interpolated multilinearly, which is the ``"limit"`` variant used by the
transport and nonlinear solvers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import GriddedField, VelocityField
from .monotone_core import Grid, GridFunction, interpolate, is_increasing
from .regularize import inf_convolution, sup_convolution

__all__ = [
    "RegularizedField",
    "FlowMap",
    "MaxMinFlows",
    "ComparisonReport",
    "MeasureBoundReport",
    "trajectories",
    "integrate_regularized_flow",
    "maximal_minimal_flow",
    "check_comparison",
    "semigroup_residual",
    "measure_bound",
    "compose",
    "worker_count",
]

WORKERS_ENV = "MONOFLOW_WORKERS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


class RegularizedField:
    """Tabulated, optionally one-sided regularized, version of a velocity field.

    Parameters
    ----------
    b : VelocityField
        Field to regularize. Gridded fields are tabulated on their own grid.
    grid : Grid
        Tabulation grid for analytic fields.
    side : {"upper", "lower", None}
        Sup-convolution, inf-convolution, or plain interpolation.
    eps : float, optional
        Regularization width; required when ``side`` is given.
    """

    def __init__(self, b: VelocityField, grid: Grid, side: str | None = None, eps: float | None = None):
        if side not in ("upper", "lower", None):
            raise ValueError(f"side must be 'upper', 'lower' or None, got {side!r}")
        if side is not None and (eps is None or eps <= 0):
            raise ValueError("a positive eps is required for one-sided regularization")
        self.field = b
        self.grid = b.grid if isinstance(b, GriddedField) else grid
        self.side = side
        self.eps = eps
        self.dim = b.dim
        self._cache: dict = {}

    def table(self, t: float) -> np.ndarray:
        key = self.field.time_key(t)
        tab = self._cache.get(key)
        if tab is None:
            if isinstance(self.field, GriddedField):
                raw = self.field.slice_at(t)
            else:
                raw = self.field(t, self.grid.points()).reshape(self.grid.shape + (self.dim,))
            gf = GridFunction(self.grid, raw)
            if self.side == "upper":
                gf = sup_convolution(gf, self.eps)
            elif self.side == "lower":
                gf = inf_convolution(gf, self.eps)
            tab = gf.values
            if len(self._cache) > 256:
                self._cache.clear()
            self._cache[key] = tab
        return tab

    def sup_norm(self, t: float) -> float:
        tab = self.table(t)
        return float(np.max(np.linalg.norm(tab.reshape(-1, self.dim), axis=1)))

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        return interpolate(self.grid, self.table(t), x)


def _time_grid(t0: float, t1: float, marks, dt: float) -> np.ndarray:
    """Times from ``t0`` to ``t1`` hitting every mark, with steps at most ``dt``."""
    pts = np.unique(np.concatenate([[t0, t1], np.asarray(marks, dtype=float)]))
    pts = pts[(pts >= t0 - 1e-14) & (pts <= t1 + 1e-14)]
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, int(np.ceil((b - a) / dt - 1e-9)))
        out.extend(a + (b - a) * np.arange(1, n + 1) / n)
    return np.asarray(out)


def _rk4_run(rhs, x0, starts, tgrid, record, quad=None, quad_shape=()):
    x = x0.copy()
    q = np.zeros((x.shape[0],) + tuple(quad_shape))
    rec_x = np.empty((len(record),) + x.shape)
    rec_q = np.empty((len(record),) + q.shape)
    r = 0
    tol = 1e-12 * max(1.0, float(np.max(np.abs(tgrid))))
    while r < len(record) and record[r] <= tgrid[0] + tol:
        rec_x[r], rec_q[r] = x, q
        r += 1
    for t, t_next in zip(tgrid[:-1], tgrid[1:]):
        h = t_next - t
        active = starts <= t + tol
        if np.any(active):
            xa = x[active]
            k1 = rhs(t, xa)
            k2 = rhs(t + 0.5 * h, xa + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, xa + 0.5 * h * k2)
            k4 = rhs(t_next - tol, xa + h * k3)
            if quad is not None:
                q1 = quad(t, xa, active)
                q2 = quad(t + 0.5 * h, xa + 0.5 * h * k1, active)
                q3 = quad(t + 0.5 * h, xa + 0.5 * h * k2, active)
                q4 = quad(t_next - tol, xa + h * k3, active)
                q[active] += h / 6.0 * (q1 + 2 * q2 + 2 * q3 + q4)
            x[active] = xa + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        while r < len(record) and record[r] <= t_next + tol:
            rec_x[r], rec_q[r] = x, q
            r += 1
    return rec_x, rec_q


def trajectories(rhs, x0, s, record_times, dt: float, starts=None, quad=None, quad_shape=(),
                 workers: int | None = None):
    """Integrate ``dx/dt = rhs(t, x)`` with RK4 from every row of ``x0``.

    Parameters
    ----------
    rhs : callable
        ``rhs(t, x) -> (N, d)``.
    x0 : array ``(N, d)``
        Starting points.
    s : float
        Common start time when ``starts`` is not given.
    record_times : array
        Output times (sorted, ``>= min(starts)``).
    dt : float
        Maximal step; the step grid hits every start and record time.
    starts : array ``(N,)``, optional
        Per-point start times; a point stays put until its start time.
    quad : callable, optional
        ``quad(t, x, active_mask) -> (n_active,) + quad_shape`` integrated along the path.

    Returns
    -------
    positions : array ``(K, N, d)`` and, if ``quad`` is given, integrals ``(K, N) + quad_shape``.
    """
    x0 = np.asarray(x0, dtype=float)
    record = np.asarray(record_times, dtype=float)
    starts = np.full(x0.shape[0], float(s)) if starts is None else np.asarray(starts, dtype=float)
    tgrid = _time_grid(float(starts.min()), float(record.max()), np.concatenate([record, np.unique(starts)]), dt)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or x0.shape[0] < 2 * workers or quad is not None:
        pos, qs = _rk4_run(rhs, x0, starts, tgrid, record, quad, quad_shape)
    else:
        chunks = np.array_split(np.arange(x0.shape[0]), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda idx: _rk4_run(rhs, x0[idx], starts[idx], tgrid, record), chunks))
        pos = np.concatenate([p[0] for p in parts], axis=1)
        qs = np.concatenate([p[1] for p in parts], axis=1)
    return (pos, qs) if quad is not None else pos


@dataclass
class FlowMap:
    """Sampled flow ``phi_{t,s}`` from start time ``s`` at stored times.

    ``positions[k]`` holds ``phi_{times[k], s}`` at the start points; when the
    start points are the nodes of ``grid`` the slices are grid functions.
    """

    start: float
    times: np.ndarray
    positions: np.ndarray
    points: np.ndarray
    variant: str
    grid: Grid | None = None
    eps: float | None = None
    velocity: VelocityField | None = None
    info: dict = field(default_factory=dict)

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t:g} is not stored in the flow")
        return k

    def at(self, t: float) -> np.ndarray:
        return self.positions[self.index(t)]

    def slice(self, t: float) -> GridFunction:
        if self.grid is None:
            raise ValueError("flow was not started from grid nodes")
        return GridFunction(self.grid, self.at(t).reshape(self.grid.shape + (self.points.shape[1],)))

    def slices_increasing(self, atol: float = 1e-9) -> bool:
        if self.grid is None:
            raise ValueError("flow was not started from grid nodes")
        d = self.points.shape[1]
        return all(is_increasing(p.reshape(self.grid.shape + (d,)), dim=self.grid.dim, atol=atol)
                   for p in self.positions)

    def __call__(self, t: float, x) -> np.ndarray:
        """Evaluate ``phi_{t,s}`` off the grid by interpolating the displacement."""
        return compose(self.grid, self.at(t), x)


def compose(grid: Grid, slice_positions: np.ndarray, x) -> np.ndarray:
    """Evaluate a sampled increasing map at arbitrary points.

    The displacement ``phi(x) - x`` is interpolated multilinearly and held
    constant outside the grid, which is exact for translations and keeps the
    map increasing.
    """
    x = np.asarray(x, dtype=float).reshape(-1, grid.dim)
    disp = slice_positions.reshape(grid.shape + (grid.dim,)) - grid.points().reshape(grid.shape + (grid.dim,))
    return x + interpolate(grid, disp, x)


def _default_field_grid(b: VelocityField, grid: Grid, s: float, t_end: float, eps: float | None) -> Grid:
    radius = float(np.max(np.abs(np.concatenate([grid.origin, grid.upper]))))
    margin = b.reach(t_end, s, radius) + 4.0 * (eps or 0.0) + 2.0 * max(grid.spacing)
    return grid.padded(margin)


def integrate_regularized_flow(b: VelocityField, side: str | None, eps: float | None, s: float, t_end: float,
                               grid: Grid, dt: float | None = None, times=None, points=None,
                               field_grid: Grid | None = None, validate: bool = True) -> FlowMap:
    """Flow of the one-sided regularized field from every node of ``grid``.

    Parameters
    ----------
    b : VelocityField
    side : {"upper", "lower", None}
        ``"upper"`` integrates the sup-convolved field, ``"lower"`` the
        inf-convolved one, ``None`` the interpolated field (limit variant).
    eps : float or None
        Regularization width.
    s, t_end : float
        Start and final time.
    grid : Grid
        Start nodes (and default tabulation grid, padded by the a priori reach).
    dt : float, optional
        RK4 step. Must satisfy ``dt <= eps / (2 sup|b|)``; chosen automatically
        when omitted.
    times : array, optional
        Output times in ``[s, t_end]``; default ``[s, t_end]``.
    points : array ``(N, d)``, optional
        Start points replacing the grid nodes.

    Raises
    ------
    ValueError
        On a CFL violation or when the field fails its growth/monotonicity
        check.
    """
    if t_end < s:
        raise ValueError("t_end must be >= s; backward flows are not integrated")
    if field_grid is None:
        field_grid = _default_field_grid(b, grid, s, t_end, eps)
    if validate and not isinstance(b, GriddedField):
        b.validate(s, field_grid, atol=1e-9)
    reg = RegularizedField(b, field_grid, side, eps)
    vmax = max(reg.sup_norm(s), reg.sup_norm(t_end), 1e-12)
    width = eps if side is not None else min(reg.grid.spacing)
    dt_max = width / (2.0 * vmax)
    if dt is None:
        dt = dt_max
    elif dt > dt_max * (1 + 1e-9):
        raise ValueError(f"CFL violation: dt={dt:g} exceeds eps/(2 sup|b|)={dt_max:g}")
    times = np.array([s, t_end]) if times is None else np.asarray(times, dtype=float)
    x0 = grid.points() if points is None else np.asarray(points, dtype=float).reshape(-1, b.dim)
    pos = trajectories(reg, x0, s, times, dt)
    variant = {"upper": "maximal", "lower": "minimal", None: "limit"}[side]
    return FlowMap(start=s, times=times, positions=pos, points=x0, variant=variant,
                   grid=grid if points is None else None, eps=eps, velocity=b,
                   info={"dt": dt, "side": side})


@dataclass
class MaxMinFlows:
    """Maximal and minimal flows at the finest regularization of a schedule.

    ``gap`` is ``|maximal - minimal|`` per stored time and node; the
    ``convergence_*`` arrays hold the last increment of each monotone
    sequence, an a posteriori estimate of the distance to the limit.
    ``extrapolated_*`` are first-order Richardson values kept as diagnostics.
    """

    maximal: FlowMap
    minimal: FlowMap
    schedule: np.ndarray
    gap: np.ndarray
    convergence_upper: np.ndarray
    convergence_lower: np.ndarray
    extrapolated_upper: np.ndarray
    extrapolated_lower: np.ndarray
    monotonicity_defect: float = 0.0

    def __iter__(self):
        yield self.maximal
        yield self.minimal


def maximal_minimal_flow(b: VelocityField, s: float, t_end: float, grid: Grid, eps_schedule=None,
                         times=None, dt: float | None = None, tol: float = 1e-6,
                         field_grid: Grid | None = None) -> MaxMinFlows:
    """Monotone limits of the upper/lower regularized flows along a decreasing schedule.

    The default schedule halves ``eps`` from ``16 h`` down to the floor ``2 h``.
    Upper flows must be nonincreasing and lower flows nondecreasing as ``eps``
    decreases; a violation larger than ``tol`` raises ``ValueError`` since it
    means the field is not admissible.
    """
    h = max(grid.spacing)
    if eps_schedule is None:
        eps_schedule = 2.0 * h * 2.0 ** np.arange(3, -1, -1)
    schedule = np.asarray(eps_schedule, dtype=float)
    if np.any(np.diff(schedule) >= 0):
        raise ValueError("eps_schedule must be strictly decreasing")
    if schedule[-1] < 2.0 * h * (1 - 1e-9):
        raise ValueError("the eps floor must be at least 2h")
    if field_grid is None:
        field_grid = _default_field_grid(b, grid, s, t_end, float(schedule[0]))
    uppers, lowers = [], []
    for eps in schedule:
        kw = dict(dt=None if dt is None else min(dt, eps / 2.0), times=times, field_grid=field_grid)
        uppers.append(integrate_regularized_flow(b, "upper", eps, s, t_end, grid, **kw))
        lowers.append(integrate_regularized_flow(b, "lower", eps, s, t_end, grid, **kw, validate=False))
    defect = 0.0
    for a, c in zip(uppers[:-1], uppers[1:]):
        defect = max(defect, float(np.max(c.positions - a.positions, initial=0.0)))
    for a, c in zip(lowers[:-1], lowers[1:]):
        defect = max(defect, float(np.max(a.positions - c.positions, initial=0.0)))
    if defect > tol:
        raise ValueError(f"regularized flows are not monotone in eps (defect {defect:.3e}); "
                         "the field does not look admissible")
    up, lo = uppers[-1], lowers[-1]
    if len(schedule) > 1:
        cu = uppers[-2].positions - up.positions
        cl = lo.positions - lowers[-2].positions
    else:
        cu = np.zeros_like(up.positions)
        cl = np.zeros_like(lo.positions)
    gap = np.linalg.norm(up.positions - lo.positions, axis=-1)
    return MaxMinFlows(maximal=up, minimal=lo, schedule=schedule, gap=gap,
                       convergence_upper=np.linalg.norm(cu, axis=-1),
                       convergence_lower=np.linalg.norm(cl, axis=-1),
                       extrapolated_upper=np.maximum(up.positions - cu, lo.positions),
                       extrapolated_lower=np.minimum(lo.positions + cl, up.positions),
                       monotonicity_defect=defect)


@dataclass
class ComparisonReport:
    ok: bool
    max_violation: float
    first_violation: tuple | None


def check_comparison(lower_traj, upper_traj, tol: float = 1e-9) -> ComparisonReport:
    """Check ``X <= Y`` componentwise at every stored time and start point.

    Accepts :class:`FlowMap` objects or position arrays of matching shape.
    Reports the first violation in (time, point, component) order.
    """
    x = lower_traj.positions if isinstance(lower_traj, FlowMap) else np.asarray(lower_traj)
    y = upper_traj.positions if isinstance(upper_traj, FlowMap) else np.asarray(upper_traj)
    if x.shape != y.shape:
        raise ValueError("trajectory arrays must have the same shape")
    excess = x - y
    worst = float(np.max(excess, initial=-np.inf))
    bad = np.argwhere(excess > tol)
    first = tuple(int(i) for i in bad[0]) if len(bad) else None
    return ComparisonReport(ok=first is None, max_violation=max(worst, 0.0), first_violation=first)


def semigroup_residual(flow: FlowMap, r: float, s: float, t: float, outer: FlowMap | None = None) -> float:
    """L1 norm over the start grid of ``phi_{t,s} o phi_{s,r} - phi_{r,t}``.

    ``flow`` starts at ``r`` and stores ``s`` and ``t``. The outer map
    ``phi_{t,s}`` comes from ``outer`` (a flow started at ``s`` on the same
    grid) or, for autonomous fields, from ``flow`` itself at time ``r + t - s``.
    """
    if not (r <= s <= t):
        raise ValueError("need r <= s <= t")
    if flow.grid is None:
        raise ValueError("flow was not started from grid nodes")
    if abs(flow.start - r) > 1e-12:
        raise ValueError("flow must start at r")
    if outer is None:
        if flow.velocity is None or not flow.velocity.autonomous:
            raise ValueError("an outer flow started at s is required for time-dependent fields")
        outer_slice = flow.at(r + (t - s))
    else:
        if abs(outer.start - s) > 1e-12 or outer.grid != flow.grid:
            raise ValueError("outer flow must start at s on the same grid")
        outer_slice = outer.at(t)
    composed = compose(flow.grid, outer_slice, flow.at(s))
    diff = np.linalg.norm(composed - flow.at(t), axis=-1)
    return float(diff.sum() * flow.grid.cell_volume)


@dataclass
class MeasureBoundReport:
    measure: float
    preimage: float
    bound: float
    tolerance: float
    ok: bool


def measure_bound(flow: FlowMap, region, s: float, t: float, tolerance: float | None = None) -> MeasureBoundReport:
    """Compare ``|phi_{t,s}^{-1}(A)|`` with ``exp(d (omega1(t) - omega1(s))) |A|``.

    ``region`` is either a boolean mask on ``flow.grid`` or a box
    ``(lower, upper)``. The preimage measure is ``h^d`` times the number of
    start nodes mapped into ``A``.
    """
    if flow.grid is None:
        raise ValueError("flow was not started from grid nodes")
    if abs(flow.start - s) > 1e-12:
        raise ValueError("flow must start at s")
    grid = flow.grid
    pos = flow.at(t)
    if isinstance(region, np.ndarray) and region.dtype == bool:
        if region.shape != grid.shape:
            raise ValueError("mask must live on the flow grid")
        measure = grid.cell_volume * int(region.sum())
        k = np.rint((pos - np.asarray(grid.origin)) / np.asarray(grid.spacing)).astype(int)
        inside = np.all((k >= 0) & (k < np.asarray(grid.shape)), axis=1)
        hit = np.zeros(len(pos), dtype=bool)
        hit[inside] = region[tuple(k[inside].T)]
    else:
        lo, hi = (np.atleast_1d(np.asarray(v, dtype=float)) for v in region)
        measure = float(np.prod(hi - lo))
        hit = np.all((pos > lo) & (pos < hi), axis=1)
    preimage = grid.cell_volume * int(hit.sum())
    d = grid.dim
    growth = flow.velocity.omega1(t, s) if flow.velocity is not None else 0.0
    bound = float(np.exp(d * growth) * measure)
    tol = 4.0 * max(grid.spacing) if tolerance is None else tolerance
    return MeasureBoundReport(measure=measure, preimage=preimage, bound=bound, tolerance=tol,
                              ok=preimage <= bound + tol)
