"""Continuity equations ``f_t + div(b f) = 0`` solved as pushforwards by the forward flow.

Densities are carried by weighted particles; slices are reconstructed as
histograms (bin width ``2 h`` by default) and as bump-smoothed densities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .fields import GriddedField, VelocityField
from .flow_engine import RegularizedField, _default_field_grid, trajectories
from .monotone_core import Grid, GridFunction
from .regularize import bump
from .transport import TransportProblem, solve_transport

__all__ = [
    "ParticleEnsemble",
    "DensitySolution",
    "stratified_particles",
    "mask_particles",
    "advect",
    "pushforward_solve",
    "duality_check",
    "jacobian",
    "jacobian_dominance",
    "renormalization_overlap",
    "histogram",
    "smoothed_density",
]


@dataclass
class ParticleEnsemble:
    """Weighted particle cloud; ``mass`` is the sum of the weights."""

    positions: np.ndarray
    weights: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.positions.shape[0],):
            raise ValueError("one weight per particle is required")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("particle positions must be finite")

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


def _stratified_points(lower, upper, per_axis, seed, jitter: bool = True) -> tuple[np.ndarray, float]:
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    per_axis = np.broadcast_to(np.asarray(per_axis, dtype=int), lower.shape)
    width = (upper - lower) / per_axis
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in per_axis], indexing="ij"), axis=-1).reshape(-1, lower.size)
    rng = np.random.default_rng(seed)
    u = rng.random(idx.shape) if jitter else np.full(idx.shape, 0.5)
    return lower + (idx + u) * width, float(np.prod(width))


def stratified_particles(f0: Callable, lower, upper, n: int, seed: int = 0) -> ParticleEnsemble:
    """One jittered particle per cell of an ``n``-cell partition of the box, weighted by ``f0``.

    The weights are ``f0(x_i) |cell|``, so sums over particles are stratified
    Monte Carlo estimates of integrals against ``f0``. Zero-weight particles
    are dropped.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    per_axis = max(1, int(round(n ** (1.0 / lower.size))))
    pts, vol = _stratified_points(lower, upper, per_axis, seed)
    w = np.asarray(f0(pts), dtype=float).reshape(-1) * vol
    if not np.all(np.isfinite(w)):
        raise ValueError("initial density is not finite on the sampling box")
    keep = w != 0
    return ParticleEnsemble(pts[keep], w[keep], seed)


def mask_particles(grid: Grid, mask: np.ndarray, per_cell: int = 4, seed: int = 0) -> ParticleEnsemble:
    """Particles for the indicator of a node mask, each node owning the cell centred on it."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.shape:
        raise ValueError("mask must live on the grid")
    centers = grid.points()[mask.ravel()]
    h = np.asarray(grid.spacing)
    k = max(1, int(round(per_cell ** (1.0 / grid.dim))))
    offs, vol = _stratified_points(-0.5 * h, 0.5 * h, k, seed)
    pts = (centers[:, None, :] + offs[None, :, :]).reshape(-1, grid.dim)
    return ParticleEnsemble(pts, np.full(len(pts), vol), seed)


def advect(b: VelocityField, ens: ParticleEnsemble, s: float, times, variant: str = "limit",
           eps: float | None = None, field_grid: Grid | None = None, h: float | None = None,
           dt: float | None = None) -> np.ndarray:
    """Positions ``(K, N, d)`` of the particles under the flow from ``s``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    side = {"limit": None, "maximal": "upper", "minimal": "lower"}[variant]
    pos = ens.positions
    if field_grid is None and not isinstance(b, GriddedField):
        lo, hi = pos.min(axis=0), pos.max(axis=0)
        hh = h if h is not None else float(np.max(hi - lo)) / 400.0
        box = Grid.from_bounds(np.floor(lo / hh) * hh, np.ceil(hi / hh) * hh + hh, hh)
        field_grid = _default_field_grid(b, box, s, float(times.max()), eps)
    if side is not None and eps is None:
        eps = 2.0 * max((field_grid or b.grid).spacing)
    reg = RegularizedField(b, field_grid, side, eps)
    vmax = max(reg.sup_norm(s), reg.sup_norm(float(times.max())), 1e-12)
    width = eps if side is not None else min(reg.grid.spacing)
    dt = width / (2.0 * vmax) if dt is None else dt
    return trajectories(reg, pos, s, times, dt)


def histogram(grid: Grid, positions: np.ndarray, weights: np.ndarray) -> GridFunction:
    """Weighted histogram density with one bin per node (bins centred on nodes)."""
    edges = [np.concatenate([ax - 0.5 * h, [ax[-1] + 0.5 * h]]) for ax, h in zip(grid.axes(), grid.spacing)]
    hist, _ = np.histogramdd(positions, bins=edges, weights=weights)
    return GridFunction(grid, hist / grid.cell_volume)


def smoothed_density(hist: GridFunction, width: float) -> GridFunction:
    """Histogram convolved with a normalized centred bump of radius ``width``."""
    grid = hist.grid
    out = np.asarray(hist.values, dtype=float)
    for j, h in enumerate(grid.spacing):
        k = max(1, int(round(width / h)))
        w = bump(np.arange(-k, k + 1) / (k + 1.0))
        w /= w.sum()
        out = ndimage.convolve1d(out, w, axis=j, mode="constant")
    return GridFunction(grid, out)


@dataclass
class DensitySolution:
    """Pushforward density: particle positions per time plus histogram slices.

    ``bins`` is the histogram grid (spacing ``2 h``); ``histograms[k]`` and
    ``smoothed[k]`` are density values on it at ``times[k]``.
    """

    times: np.ndarray
    positions: np.ndarray
    weights: np.ndarray
    bins: Grid
    histograms: np.ndarray
    smoothed: np.ndarray
    velocity: VelocityField | None = None
    f0: Callable | None = None
    info: dict = field(default_factory=dict)

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t:g} is not stored")
        return k

    def pairing(self, t: float, test: Callable) -> float:
        """``int test(x) f(t, x) dx`` evaluated on the particles."""
        vals = np.asarray(test(self.positions[self.index(t)]), dtype=float).reshape(-1)
        return float(np.dot(vals, self.weights))

    def mass(self, t: float) -> float:
        return float(self.histograms[self.index(t)].sum() * self.bins.cell_volume)


def _bin_grid(grid: Grid, factor: int = 2) -> Grid:
    h = np.asarray(grid.spacing) * factor
    n = np.maximum((np.asarray(grid.shape) - 1) // factor, 1) + 1
    return Grid(grid.origin, tuple(h), tuple(n))


def _densities(ens, positions, grid, bin_factor, smooth_factor):
    bins = _bin_grid(grid, bin_factor)
    hists = np.stack([histogram(bins, p, ens.weights).values for p in positions])
    width = smooth_factor * max(grid.spacing)
    smooth = np.stack([smoothed_density(GridFunction(bins, hh), width).values for hh in hists])
    return bins, hists, smooth


def pushforward_solve(b: VelocityField, f0: Callable, grid: Grid, times, n_particles: int = 10 ** 4,
                      seed: int = 0, sample_box=None, variant: str = "limit", eps: float | None = None,
                      bin_factor: int = 2, smooth_factor: float = 4.0) -> DensitySolution:
    """Push ``f0`` forward by the flow of ``b`` from time ``times[0]``.

    Parameters
    ----------
    f0 : callable
        Initial density on ``(N, d)`` points; signed densities give signed weights.
    grid : Grid
        Output resolution ``h``; histograms use bins of ``bin_factor * h``.
    sample_box : pair of arrays, optional
        Box where ``f0`` is sampled; defaults to the grid box.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    lo, hi = (grid.origin, grid.upper) if sample_box is None else sample_box
    ens = stratified_particles(f0, lo, hi, n_particles, seed)
    if ens.positions.shape[0] == 0:
        raise ValueError("initial density vanishes on the sampling box")
    pos = advect(b, ens, float(times[0]), times, variant=variant, eps=eps, h=min(grid.spacing))
    bins, hists, smooth = _densities(ens, pos, grid, bin_factor, smooth_factor)
    return DensitySolution(times, pos, ens.weights, bins, hists, smooth, velocity=b, f0=f0,
                           info={"seed": seed, "n_particles": len(ens.weights), "grid": grid,
                                 "variant": variant, "eps": eps})


def duality_check(density: DensitySolution, test: Callable, t0: float, grid: Grid | None = None) -> dict:
    """Compare ``int test f(t0)`` with ``int u(0) f0`` where ``u`` solves the transport
    equation with terminal datum ``test`` at ``t0``.

    Returns both pairings and their absolute difference.
    """
    grid = density.info["grid"] if grid is None else grid
    if density.velocity is None or density.f0 is None:
        raise ValueError("density solution does not carry its field and initial datum")
    left = density.pairing(t0, test)
    s = float(density.times[0])
    prob = TransportProblem(_shifted_field(density.velocity, s), test, T=t0 - s)
    u0 = solve_transport(prob, grid, [0.0]).values[0]
    f0 = np.asarray(density.f0(grid.points()), dtype=float).reshape(grid.shape)
    right = float(np.sum(u0 * f0 * _trapezoid_weights(grid)))
    return {"pushforward": left, "transport": right, "residual": abs(left - right)}


def _trapezoid_weights(grid: Grid) -> np.ndarray:
    w = np.ones(grid.shape)
    for j in range(grid.dim):
        wj = np.ones(grid.shape[j])
        wj[[0, -1]] = 0.5
        w = w * wj.reshape([-1 if i == j else 1 for i in range(grid.dim)])
    return w * grid.cell_volume


def _shifted_field(b: VelocityField, s: float) -> VelocityField:
    if s == 0.0 or b.autonomous:
        return b
    return VelocityField(lambda t, x: b(t + s, x), dim=b.dim, C0=b.C0, C1=b.C1, name=b.name,
                         autonomous=False, C2=b.C2)


def jacobian(b: VelocityField, grid: Grid, times, per_cell: int = 4, seed: int = 0,
             variant: str = "limit") -> DensitySolution:
    """``J(t) = S*(t, 0) 1`` on the grid box.

    Lebesgue measure is sampled on the grid box enlarged by the a priori
    reach of the flow, so every particle that can land in the box is present.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    radius = float(np.max(np.abs(np.concatenate([grid.origin, grid.upper]))))
    margin = b.reach(float(times.max()), float(times[0]), radius) + 2 * max(grid.spacing)
    big = grid.padded(margin)
    ens = mask_particles(big, np.ones(big.shape, dtype=bool), per_cell, seed)
    pos = advect(b, ens, float(times[0]), times, variant=variant, h=min(grid.spacing))
    bins, hists, smooth = _densities(ens, pos, grid, 2, 4.0)
    return DensitySolution(times, pos, ens.weights, bins, hists, smooth, velocity=b, f0=lambda x: np.ones(len(x)),
                           info={"seed": seed, "grid": grid, "variant": variant})


def jacobian_dominance(J: DensitySolution, density: DensitySolution, f0_sup: float, t: float) -> float:
    """Largest excess of ``|f(t)|`` over ``||f0||_inf J(t)`` on common bins (<= 0 means dominated)."""
    if J.bins != density.bins:
        raise ValueError("densities must share the histogram grid")
    k, m = J.index(t), density.index(t)
    return float(np.max(np.abs(density.histograms[m]) - f0_sup * J.histograms[k]))


def renormalization_overlap(b: VelocityField, grid: Grid, A_plus: np.ndarray, A_minus: np.ndarray,
                            s: float, t: float, per_cell: int = 4, seed: int = 0, variant: str = "limit",
                            bin_factor: int = 2) -> float:
    """``int (S* 1_{A+})(t) (S* 1_{A-})(t) dx`` for disjoint node masks, via histograms.

    Zero up to binning error means the pushforwards of the positive and
    negative parts do not overlap, i.e. renormalization holds for data signed
    on ``A+`` / ``A-``.
    """
    A_plus = np.asarray(A_plus, dtype=bool)
    A_minus = np.asarray(A_minus, dtype=bool)
    if np.any(A_plus & A_minus):
        raise ValueError("masks must be disjoint")
    bins = _bin_grid(grid, bin_factor)
    margin = b.reach(t, s, float(np.max(np.abs(np.concatenate([grid.origin, grid.upper])))))
    bins_big = bins.padded(margin)
    hs = []
    for k, mask in enumerate((A_plus, A_minus)):
        ens = mask_particles(grid, mask, per_cell, seed + k)
        pos = advect(b, ens, s, [t], variant=variant, h=min(grid.spacing))[0]
        hs.append(histogram(bins_big, pos, ens.weights).values)
    return float(np.sum(hs[0] * hs[1]) * bins_big.cell_volume)
