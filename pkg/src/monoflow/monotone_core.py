"""Partial order on R^d, monotone grid functions, envelopes and ABV variation.

Grid functions store their samples with the grid axes first (``indexing="ij"``)
and, for vector-valued functions, one trailing component axis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid",
    "GridFunction",
    "ABVReport",
    "leq",
    "is_increasing",
    "is_decreasing",
    "envelope",
    "abv_norm",
    "abv_profile",
    "abv_decompose",
    "interpolate",
]


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid.

    Parameters
    ----------
    origin : sequence of float
        Coordinates of the lowest corner node.
    spacing : sequence of float
        Node spacing per axis, all positive.
    shape : sequence of int
        Node count per axis, each at least 2.
    """

    origin: tuple[float, ...]
    spacing: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        spacing = tuple(float(h) for h in np.atleast_1d(self.spacing))
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        if not (len(origin) == len(spacing) == len(shape)) or len(shape) == 0:
            raise ValueError("origin, spacing and shape must have one entry per axis")
        if any(h <= 0 for h in spacing):
            raise ValueError("grid spacing must be positive")
        if any(n < 2 for n in shape):
            raise ValueError("every axis needs at least two nodes")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_bounds(cls, lower, upper, h) -> Grid:
        """Grid with nodes from ``lower`` to ``upper`` (inclusive) and spacing ``h``.

        ``upper - lower`` must be an integer multiple of ``h`` up to rounding.
        """
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        h = np.broadcast_to(np.asarray(h, dtype=float), lower.shape)
        n = np.rint((upper - lower) / h).astype(int) + 1
        return cls(tuple(lower), tuple(h), tuple(n))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + h * (n - 1) for o, h, n in zip(self.origin, self.spacing, self.shape))

    def axis(self, j: int) -> np.ndarray:
        return self.origin[j] + self.spacing[j] * np.arange(self.shape[j])

    def axes(self) -> list[np.ndarray]:
        return [self.axis(j) for j in range(self.dim)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """Node coordinates as an ``(size, dim)`` array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def index_of(self, x) -> tuple[int, ...]:
        """Index of the node at ``x``; raises if ``x`` is not (close to) a node."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise ValueError(f"expected a point of dimension {self.dim}")
        k = (x - np.asarray(self.origin)) / np.asarray(self.spacing)
        idx = np.rint(k).astype(int)
        if np.any(np.abs(k - idx) > 1e-6) or np.any(idx < 0) or np.any(idx >= np.asarray(self.shape)):
            raise ValueError(f"point {x} is not a node of the grid")
        return tuple(int(i) for i in idx)

    def refine(self, factor: int) -> Grid:
        return Grid(self.origin, tuple(h / factor for h in self.spacing),
                    tuple((n - 1) * factor + 1 for n in self.shape))

    def padded(self, margin) -> Grid:
        """Grid with the same spacing extended by at least ``margin`` on every side."""
        margin = np.broadcast_to(np.asarray(margin, dtype=float), (self.dim,))
        k = np.ceil(margin / np.asarray(self.spacing) - 1e-9).astype(int)
        k = np.maximum(k, 0)
        origin = np.asarray(self.origin) - k * np.asarray(self.spacing)
        return Grid(tuple(origin), self.spacing, tuple(np.asarray(self.shape) + 2 * k))


@dataclass(frozen=True)
class GridFunction:
    """Samples of a scalar or vector function on a :class:`Grid`.

    ``values`` has shape ``grid.shape`` (scalar) or ``grid.shape + (m,)``.
    ``tag`` records a monotonicity claim and is verified at construction.
    """

    grid: Grid
    values: np.ndarray
    tag: str = "none"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        g = self.grid.shape
        if values.shape != g and not (values.ndim == len(g) + 1 and values.shape[:-1] == g):
            raise ValueError(f"values of shape {values.shape} do not match grid {g}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.tag not in ("increasing", "decreasing", "none"):
            raise ValueError(f"unknown monotonicity tag {self.tag!r}")
        if self.tag == "increasing" and not is_increasing(self):
            raise ValueError("values are not increasing")
        if self.tag == "decreasing" and not is_decreasing(self):
            raise ValueError("values are not decreasing")

    @classmethod
    def from_callable(cls, grid: Grid, func, tag: str = "none") -> GridFunction:
        """Sample ``func`` (taking an ``(N, d)`` array) at the grid nodes."""
        vals = np.asarray(func(grid.points()), dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(grid.shape)
        else:
            vals = vals.reshape(grid.shape + (vals.shape[-1],))
        return cls(grid, vals, tag)

    @property
    def is_scalar(self) -> bool:
        return self.values.ndim == self.grid.dim

    @property
    def ncomp(self) -> int:
        return 1 if self.is_scalar else self.values.shape[-1]

    def components(self) -> np.ndarray:
        """Values with an explicit trailing component axis."""
        return self.values[..., None] if self.is_scalar else self.values

    def with_values(self, values, tag: str = "none") -> GridFunction:
        return GridFunction(self.grid, values, tag)

    def __call__(self, x) -> np.ndarray:
        return interpolate(self.grid, self.values, x)


@dataclass(frozen=True)
class ABVReport:
    """ABV norm on a box and the split ``phi = phi_plus - phi_minus`` into increasing parts."""

    norm: float
    phi_plus: GridFunction
    phi_minus: GridFunction
    box: tuple[tuple[int, ...], tuple[int, ...]] = field(default=((), ()))


def leq(x, y) -> bool:
    """Componentwise order: ``x <= y`` iff every coordinate is ``<=``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return bool(np.all(x <= y))


def _steps(values: np.ndarray, dim: int):
    for j in range(dim):
        yield np.diff(values, axis=j)


def is_increasing(phi: GridFunction | np.ndarray, dim: int | None = None, atol: float = 0.0) -> bool:
    """True iff every component is nondecreasing along every grid axis."""
    values, dim = _unpack(phi, dim)
    return all(np.all(s >= -atol) for s in _steps(values, dim))


def is_decreasing(phi: GridFunction | np.ndarray, dim: int | None = None, atol: float = 0.0) -> bool:
    values, dim = _unpack(phi, dim)
    return all(np.all(s <= atol) for s in _steps(values, dim))


def _unpack(phi, dim):
    if isinstance(phi, GridFunction):
        return phi.values, phi.grid.dim
    values = np.asarray(phi, dtype=float)
    return values, values.ndim if dim is None else dim


def _neighborhood_stack(values: np.ndarray, dim: int) -> np.ndarray:
    pad = [(1, 1)] * dim + [(0, 0)] * (values.ndim - dim)
    padded = np.pad(values, pad, mode="edge")
    out = []
    for off in itertools.product((0, 1, 2), repeat=dim):
        sl = tuple(slice(o, o + n) for o, n in zip(off, values.shape[:dim]))
        out.append(padded[sl])
    return np.stack(out)


def envelope(phi: GridFunction, side: str) -> GridFunction:
    """Discrete upper/lower semicontinuous envelope.

    Node-wise max (``side="upper"``) or min (``side="lower"``) over the node
    and its immediate neighbours, including diagonal ones.
    """
    stack = _neighborhood_stack(phi.values, phi.grid.dim)
    if side == "upper":
        return phi.with_values(stack.max(axis=0))
    if side == "lower":
        return phi.with_values(stack.min(axis=0))
    raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")


def _box_slices(phi: GridFunction, box) -> tuple[tuple[int, ...], tuple[int, ...]]:
    lo, hi = box
    try:
        lo_idx = phi.grid.index_of(lo)
        hi_idx = phi.grid.index_of(hi)
    except ValueError as exc:
        raise ValueError(f"box outside grid: {exc}") from None
    if not all(a <= b for a, b in zip(lo_idx, hi_idx)):
        raise ValueError("box corners must satisfy lower <= upper")
    return lo_idx, hi_idx


def abv_profile(values: np.ndarray) -> np.ndarray:
    """Table ``V[x] = ||phi||_ABV([a, x])`` for every node ``x`` of the array.

    ``a`` is the first node. ``V[x]`` is the largest total variation of
    ``phi`` along a monotone lattice path from ``a`` to ``x`` made of single
    axis unit steps, computed over the path DAG in lexicographic node order.
    """
    values = np.asarray(values, dtype=float)
    dim = values.ndim
    table = np.full(values.shape, -np.inf)
    table[(0,) * dim] = 0.0
    if dim == 1:
        table[1:] = np.cumsum(np.abs(np.diff(values)))
        return table
    for idx in np.ndindex(*values.shape):
        if not any(idx):
            continue
        best = -np.inf
        v = values[idx]
        for j in range(dim):
            if idx[j] == 0:
                continue
            prev = idx[:j] + (idx[j] - 1,) + idx[j + 1:]
            cand = table[prev] + abs(v - values[prev])
            if cand > best:
                best = cand
        table[idx] = best
    return table


def abv_norm(phi: GridFunction, box) -> float:
    """ABV norm of a scalar grid function on a grid-aligned box.

    Maximum over monotone lattice paths from the lower to the upper corner of
    the summed absolute increments.
    """
    if not phi.is_scalar:
        raise ValueError("abv_norm expects a scalar grid function")
    lo, hi = _box_slices(phi, box)
    sub = phi.values[tuple(slice(a, b + 1) for a, b in zip(lo, hi))]
    return float(abv_profile(sub)[(-1,) * sub.ndim])


def abv_decompose(phi: GridFunction, box) -> ABVReport:
    """Split ``phi`` on ``box`` into the difference of two increasing functions.

    With ``V(x) = ||phi||_ABV([a, x])`` the parts are ``(V + phi) / 2`` and
    ``(V - phi) / 2``; both are returned on the sub-grid spanned by the box.
    """
    if not phi.is_scalar:
        raise ValueError("abv_decompose expects a scalar grid function")
    lo, hi = _box_slices(phi, box)
    sub = phi.values[tuple(slice(a, b + 1) for a, b in zip(lo, hi))]
    table = abv_profile(sub)
    g = phi.grid
    subgrid = Grid(tuple(o + h * i for o, h, i in zip(g.origin, g.spacing, lo)), g.spacing,
                   tuple(b - a + 1 for a, b in zip(lo, hi)))
    p1 = 0.5 * (table + sub)
    p2 = 0.5 * (table - sub)
    return ABVReport(
        norm=float(table[(-1,) * sub.ndim]),
        phi_plus=GridFunction(subgrid, p1),
        phi_minus=GridFunction(subgrid, p2),
        box=(lo, hi),
    )


def interpolate(grid: Grid, values: np.ndarray, x) -> np.ndarray:
    """Multilinear interpolation of grid samples at points ``x`` of shape ``(N, d)``.

    Points outside the grid are clamped to the boundary (constant extension).
    Order preserving: increasing samples give an increasing interpolant.
    """
    values = np.asarray(values, dtype=float)
    x = np.asarray(x, dtype=float)
    d = grid.dim
    if x.ndim == 1 and d == 1:
        x = x[:, None]
    pts = x.reshape(-1, d)
    scalar = values.ndim == d
    vals = values[..., None] if scalar else values
    if d == 1:
        xs = grid.axis(0)
        out = np.stack([np.interp(pts[:, 0], xs, vals[:, k]) for k in range(vals.shape[-1])], axis=-1)
    else:
        lo_idx = []
        frac = []
        for j in range(d):
            n = grid.shape[j]
            s = (pts[:, j] - grid.origin[j]) / grid.spacing[j]
            s = np.clip(s, 0.0, n - 1)
            i = np.minimum(np.floor(s).astype(np.intp), n - 2)
            lo_idx.append(i)
            frac.append(s - i)
        out = np.zeros((pts.shape[0], vals.shape[-1]))
        for corner in itertools.product((0, 1), repeat=d):
            w = np.ones(pts.shape[0])
            idx = []
            for j, c in enumerate(corner):
                w = w * (frac[j] if c else 1.0 - frac[j])
                idx.append(lo_idx[j] + c)
            out += w[:, None] * vals[tuple(idx)]
    out = out.reshape(x.shape[:-1] + (vals.shape[-1],)) if x.ndim > 1 else out
    return out[..., 0] if scalar else out
