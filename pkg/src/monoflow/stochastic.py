"""Stochastic flows ``dX = b(t, X) dt + sigma(t, X) dW`` and second-order equations.

Row ``i`` of ``sigma`` may only depend on ``x_i``; this is enforced by
evaluating each row on its own coordinate. Brownian increments for step
``k`` come from a Philox generator keyed on ``(seed, k)``, so every run with
the same seed and time grid sees the same noise whatever the start points
or the thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .continuity import DensitySolution, _densities, stratified_particles
from .fields import GriddedField, VelocityField, oscillation_constant
from .flow_engine import RegularizedField, _default_field_grid, _time_grid
from .monotone_core import Grid
from .transport import TransportSolution

__all__ = [
    "NoiseSpec",
    "PathBundle",
    "brownian_increments",
    "em_flow",
    "coupled_order_check",
    "solve_second_order_te",
    "solve_fokker_planck",
    "heat_step_reference",
]


@dataclass
class NoiseSpec:
    """Diffusion matrix given row by row.

    ``rows[i](t, xi)`` receives the ``i``-th coordinates ``(...,)`` and
    returns ``(..., m)`` values of ``sigma_{i, :}``.
    """

    rows: Sequence[Callable]
    m: int
    lipschitz: float = 0.0

    @classmethod
    def additive(cls, dim: int, amplitude: float) -> NoiseSpec:
        """``sigma = amplitude * I``."""
        def make(i):
            def row(t, xi):
                out = np.zeros(np.shape(xi) + (dim,))
                out[..., i] = amplitude
                return out
            return row
        return cls([make(i) for i in range(dim)], m=dim)

    @classmethod
    def zero(cls, dim: int) -> NoiseSpec:
        return cls.additive(dim, 0.0)

    @property
    def dim(self) -> int:
        return len(self.rows)

    def matrix(self, t: float, x: np.ndarray) -> np.ndarray:
        """``sigma(t, x)`` with shape ``x.shape + (m,)``."""
        rows = [np.asarray(r(t, x[..., i]), dtype=float).reshape(x.shape[:-1] + (self.m,))
                for i, r in enumerate(self.rows)]
        return np.stack(rows, axis=-2)


def brownian_increments(seed: int, step: int, shape, dt: float) -> np.ndarray:
    """``sqrt(dt) N(0, I)`` draws for one step from a generator keyed on ``(seed, step)``."""
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, step], dtype=np.uint64)))
    return np.sqrt(dt) * gen.standard_normal(shape)


@dataclass
class PathBundle:
    """Paths ``positions[k, p, n]`` = ``Phi_{times[k], s}(points[n])`` for sample ``p``."""

    start: float
    times: np.ndarray
    positions: np.ndarray
    points: np.ndarray
    seed: int
    side: str | None
    dt: float
    info: dict = field(default_factory=dict)

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t:g} is not stored")
        return self.positions[k]


def _drift(b, side, eps, field_grid):
    reg = RegularizedField(b, field_grid, side, eps)
    return reg


def _em(reg, noise: NoiseSpec, x0, tgrid, step0: int, record, seed: int, n_paths: int):
    """Euler-Maruyama from ``tgrid[0]``; ``x0`` has shape ``(P, N, d)``."""
    x = x0.copy()
    out = np.empty((len(record),) + x.shape)
    r = 0
    tol = 1e-12 * max(1.0, float(np.max(np.abs(tgrid))))
    while r < len(record) and record[r] <= tgrid[0] + tol:
        out[r] = x
        r += 1
    p, n, d = x.shape
    for k, (t, t_next) in enumerate(zip(tgrid[:-1], tgrid[1:])):
        h = t_next - t
        dw = brownian_increments(seed, step0 + k, (n_paths, noise.m), h)
        drift = reg(t, x.reshape(-1, d)).reshape(x.shape)
        sig = noise.matrix(t, x)
        x = x + h * drift + np.einsum("pndm,pm->pnd", sig, dw)
        while r < len(record) and record[r] <= t_next + tol:
            out[r] = x
            r += 1
    return out


def _check_field(b: VelocityField, grid: Grid, t: float) -> dict:
    if isinstance(b, GriddedField):
        return {}
    b.validate(t, grid, atol=1e-9)
    osc = oscillation_constant(b, t, grid)
    if not np.isfinite(osc):
        raise ValueError("oscillation bound violated")
    return {"oscillation": osc}


def em_flow(b: VelocityField, noise: NoiseSpec, side: str | None, eps: float | None, s: float, t_end: float,
            dt: float, n_paths: int, seed: int, points=None, grid: Grid | None = None, times=None,
            field_grid: Grid | None = None) -> PathBundle:
    """Euler-Maruyama paths under the one-sided regularized drift.

    All start points share the Brownian path of sample ``p`` (this is the
    stochastic flow), so bundles from the same seed are pathwise coupled.

    Raises
    ------
    ValueError
        If ``dt`` exceeds ``eps / (2 sup|b|)`` (or ``h / (2 sup|b|)`` without
        regularization) or the field fails its admissibility checks.
    """
    if points is None:
        if grid is None:
            raise ValueError("either points or grid is required")
        points = grid.points()
    points = np.asarray(points, dtype=float).reshape(-1, b.dim)
    if noise.dim != b.dim:
        raise ValueError("noise and field dimensions differ")
    if side is not None and (eps is None or eps <= 0):
        raise ValueError("one-sided drift needs a positive eps")
    times = np.array([s, t_end]) if times is None else np.asarray(times, dtype=float)
    if field_grid is None and not isinstance(b, GriddedField):
        lo, hi = points.min(axis=0), points.max(axis=0)
        hh = eps / 2.0 if eps else 0.01
        box = Grid.from_bounds(lo - hh, np.maximum(hi, lo + hh) + hh, hh)
        # noise can push paths far out; pad by several standard deviations
        spread = 6.0 * float(np.max(np.abs(noise.matrix(s, points[:1])))) * np.sqrt(max(t_end - s, 0.0))
        field_grid = _default_field_grid(b, box, s, t_end, eps).padded(spread)
    info = _check_field(b, field_grid if field_grid is not None else b.grid, s)
    reg = _drift(b, side, eps, field_grid)
    vmax = max(reg.sup_norm(s), reg.sup_norm(t_end), 1e-12)
    width = eps if side is not None else min(reg.grid.spacing)
    if dt > width / (2.0 * vmax) * (1 + 1e-9):
        raise ValueError(f"step too large: dt={dt:g} exceeds {width / (2 * vmax):g}")
    tgrid = _time_grid(s, float(times.max()), times, dt)
    x0 = np.broadcast_to(points, (n_paths,) + points.shape).copy()
    pos = _em(reg, noise, x0, tgrid, 0, times, seed, n_paths)
    info.update({"eps": eps})
    return PathBundle(s, times, pos, points, seed, side, dt, info)


def coupled_order_check(lo: PathBundle, hi: PathBundle, tol: float = 1e-9) -> float:
    """Fraction of (sample, time, node) triples with ``lo > hi`` in some component."""
    if lo.seed != hi.seed:
        raise ValueError("seed mismatch: bundles are not coupled")
    if lo.positions.shape != hi.positions.shape or not np.allclose(lo.times, hi.times):
        raise ValueError("bundles must have matching shapes and times")
    bad = np.any(lo.positions > hi.positions + tol, axis=-1)
    return float(bad.mean())


def solve_second_order_te(b: VelocityField, noise: NoiseSpec, u_T: Callable, grid: Grid, times, T: float,
                          n_paths: int, seed: int, dt: float, side: str | None = None,
                          eps: float | None = None, chunk: int = 4_000_000) -> TransportSolution:
    """``u(t, x) = E[u_T(Phi_{T,t}(x))]`` by Monte Carlo at every node and time.

    ``info["stderr"]`` holds the standard error of each entry. Paths from
    different start times share increments on a common time grid.

    Raises
    ------
    ValueError
        If ``u_T`` produces non-finite or overflowing values along the paths.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    nodes = grid.points()
    tgrid = _time_grid(float(times.min()), T, np.concatenate([times, [T]]), dt)
    field_grid = None
    if not isinstance(b, GriddedField):
        spread = 6.0 * float(np.max(np.abs(noise.matrix(0.0, nodes[:1])))) * np.sqrt(T)
        field_grid = _default_field_grid(b, grid, float(times.min()), T, eps).padded(spread)
        _check_field(b, field_grid, float(times.min()))
    reg = _drift(b, side, eps, field_grid)
    mean = np.empty((times.size, grid.size))
    err = np.empty_like(mean)
    for k, t in enumerate(times):
        k0 = int(np.argmin(np.abs(tgrid - t)))
        acc = np.zeros(grid.size)
        acc2 = np.zeros(grid.size)
        done = 0
        # split the paths into chunks to bound memory; keys stay (seed, step)
        sub = max(1, chunk // max(1, grid.size))
        while done < n_paths:
            p = min(sub, n_paths - done)
            x0 = np.broadcast_to(nodes, (p,) + nodes.shape).copy()
            xT = _em_chunk(reg, noise, x0, tgrid[k0:], k0, seed, n_paths, done)
            vals = np.asarray(u_T(xT.reshape(-1, grid.dim)), dtype=float).reshape(p, grid.size)
            if not np.all(np.isfinite(vals)) or np.max(np.abs(vals)) > 1e150:
                raise ValueError("variance overflow: terminal datum blows up along the paths")
            acc += vals.sum(axis=0)
            acc2 += (vals ** 2).sum(axis=0)
            done += p
        m = acc / n_paths
        var = np.maximum(acc2 / n_paths - m ** 2, 0.0)
        mean[k] = m
        err[k] = np.sqrt(var / max(n_paths - 1, 1))
    return TransportSolution(grid, times, mean.reshape((times.size,) + grid.shape), provenance="stochastic",
                             info={"stderr": err.reshape((times.size,) + grid.shape), "seed": seed,
                                   "n_paths": n_paths, "dt": dt})


def _em_chunk(reg, noise, x0, tgrid, step0, seed, n_paths, offset):
    """Terminal positions for paths ``offset .. offset + len(x0)`` of a bundle of ``n_paths``."""
    x = x0
    p, n, d = x.shape
    for k, (t, t_next) in enumerate(zip(tgrid[:-1], tgrid[1:])):
        h = t_next - t
        dw = brownian_increments(seed, step0 + k, (n_paths, noise.m), h)[offset:offset + p]
        drift = reg(t, x.reshape(-1, d)).reshape(x.shape)
        x = x + h * drift + np.einsum("pndm,pm->pnd", noise.matrix(t, x), dw)
    return x


def solve_fokker_planck(b: VelocityField, noise: NoiseSpec, f0: Callable, grid: Grid, times, n_particles: int,
                        seed: int, dt: float, sample_box=None, side: str | None = None,
                        eps: float | None = None) -> DensitySolution:
    """``f(t) = E (Phi_{t,0})_# f0`` with one independent Brownian path per particle."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    lo, hi = (grid.origin, grid.upper) if sample_box is None else sample_box
    ens = stratified_particles(f0, lo, hi, n_particles, seed)
    n = ens.positions.shape[0]
    field_grid = None
    if not isinstance(b, GriddedField):
        spread = 6.0 * float(np.max(np.abs(noise.matrix(0.0, ens.positions[:1])))) * np.sqrt(float(times.max()))
        field_grid = _default_field_grid(b, grid, float(times[0]), float(times.max()), eps).padded(spread)
        _check_field(b, field_grid, float(times[0]))
    reg = _drift(b, side, eps, field_grid)
    tgrid = _time_grid(float(times[0]), float(times.max()), times, dt)
    pos = _em(reg, noise, ens.positions[:, None, :], tgrid, 0, times, seed, n)[:, :, 0, :]
    bins, hists, smooth = _densities(ens, pos, grid, 2, 4.0)
    return DensitySolution(times, pos, ens.weights, bins, hists, smooth, velocity=b, f0=f0,
                           info={"seed": seed, "grid": grid, "n_particles": n})


def heat_step_reference(x, tau: float, diffusivity: float) -> np.ndarray:
    """``E[1{x + sqrt(2 D tau) Z <= 0}]`` = Gaussian CDF of ``-x / sqrt(2 D tau)``."""
    x = np.asarray(x, dtype=float)
    if tau <= 0:
        return (x <= 0).astype(float)
    return ndtr(-x / np.sqrt(2.0 * diffusivity * tau))
