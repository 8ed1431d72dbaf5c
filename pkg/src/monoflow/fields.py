"""Velocity fields with coordinate-wise increasing structure.

A field ``b(t, x)`` is admissible when ``|b(t, x)| <= C0(t) (1 + |x|)`` and
``x -> b(t, x) + C1(t) x`` is increasing for the componentwise order. The
catalog holds the analytic fields used throughout the package; gridded
fields carry time-sliced samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .monotone_core import Grid, GridFunction, interpolate, is_increasing

__all__ = [
    "VelocityField",
    "GriddedField",
    "sign_field",
    "line_field",
    "diagonal_field",
    "linear_field",
    "constant_field",
    "zero_field",
    "step_field",
    "CATALOG",
    "catalog_entries",
    "make_field",
    "oscillation_constant",
]


def _as_profile(c) -> Callable[[float], float]:
    if callable(c):
        return c
    value = float(c)
    return lambda t: value


def _integral(profile, a: float, b: float, n: int = 64) -> float:
    if b <= a:
        return 0.0
    t = np.linspace(a, b, n + 1)
    vals = np.array([profile(s) for s in t])
    return float(np.trapezoid(vals, t))


@dataclass
class VelocityField:
    """Analytic velocity field ``b(t, x)`` evaluated on point arrays ``(N, d)``.

    Parameters
    ----------
    func : callable
        ``func(t, x) -> (N, d)`` array.
    dim : int
        Space dimension.
    C0, C1 : float or callable of t
        Growth and one-sided Lipschitz profiles.
    name : str
        Catalog identifier.
    autonomous : bool
        Whether ``func`` ignores ``t``; autonomous fields are tabulated once.
    C2 : float, optional
        Declared oscillation constant ``|b(x) - b(y)| <= C2 (|x - y| + 1)``.
    """

    func: Callable
    dim: int
    C0: float | Callable = 1.0
    C1: float | Callable = 0.0
    name: str = "field"
    autonomous: bool = True
    C2: float | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.asarray(self.func(t, x), dtype=float).reshape(-1, self.dim)

    def time_key(self, t: float):
        return None if self.autonomous else float(t)

    def omega0(self, t: float, s: float = 0.0) -> float:
        return _integral(_as_profile(self.C0), s, t)

    def omega1(self, t: float, s: float = 0.0) -> float:
        return _integral(_as_profile(self.C1), s, t)

    def sample(self, t: float, grid: Grid) -> GridFunction:
        vals = self(t, grid.points()).reshape(grid.shape + (self.dim,))
        return GridFunction(grid, vals)

    def reach(self, t_end: float, s: float, radius: float) -> float:
        """A priori bound on ``|phi_{t,s}(x) - x|`` for ``|x| <= radius``."""
        w0 = self.omega0(t_end, s)
        return (1.0 + radius) * np.expm1(w0)

    def validate(self, t: float, grid: Grid, atol: float = 1e-12) -> None:
        """Check the growth bound and the shifted monotonicity on grid samples."""
        pts = grid.points()
        vals = self(t, pts)
        c0 = _as_profile(self.C0)(t)
        c1 = _as_profile(self.C1)(t)
        bound = c0 * (1.0 + np.linalg.norm(pts, axis=1))
        if np.any(np.linalg.norm(vals, axis=1) > bound + atol):
            raise ValueError(f"field {self.name!r} violates |b| <= C0 (1 + |x|) at t={t:g}")
        shifted = (vals + c1 * pts).reshape(grid.shape + (self.dim,))
        if not is_increasing(shifted, dim=grid.dim, atol=atol):
            raise ValueError(f"field {self.name!r}: b + C1 x is not increasing at t={t:g}")
        if self.C2 is not None:
            osc = oscillation_constant(self, t, grid)
            if osc > self.C2 + atol:
                raise ValueError(f"field {self.name!r} violates the oscillation bound C2={self.C2:g} (measured {osc:g})")


def oscillation_constant(b: VelocityField, t: float, grid: Grid, pairs: int = 20000, seed: int = 0) -> float:
    """Sampled estimate of ``sup |b(x) - b(y)| / (|x - y| + 1)`` over grid nodes."""
    pts = grid.points()
    vals = b(t, pts)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(pts), size=pairs)
    j = rng.integers(0, len(pts), size=pairs)
    num = np.linalg.norm(vals[i] - vals[j], axis=1)
    den = np.linalg.norm(pts[i] - pts[j], axis=1) + 1.0
    # extreme pairs: the largest and smallest value in each component
    lo = vals.argmin(axis=0)
    hi = vals.argmax(axis=0)
    ext = np.linalg.norm(vals[hi] - vals[lo], axis=1) / (np.linalg.norm(pts[hi] - pts[lo], axis=1) + 1.0)
    return float(max((num / den).max(initial=0.0), ext.max(initial=0.0)))


@dataclass
class GriddedField(VelocityField):
    """Field given by samples on a grid at time slices.

    On ``[times[k], times[k+1])`` the field equals the slice ``k`` (the last
    slice holds up to and beyond ``times[-1]``); space is interpolated
    multilinearly with constant extension outside the grid.
    """

    grid: Grid | None = None
    times: np.ndarray | None = None
    slices: np.ndarray | None = None

    @classmethod
    def from_slices(cls, grid: Grid, times, slices, C0=1.0, C1=0.0, name="grid") -> GriddedField:
        slices = np.asarray(slices, dtype=float)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if slices.shape[0] != times.size:
            raise ValueError("one slice per time is required")
        if slices.ndim == grid.dim + 1:
            slices = slices[..., None]
        obj = cls(func=None, dim=slices.shape[-1], C0=C0, C1=C1, name=name,
                  autonomous=times.size == 1, grid=grid, times=times, slices=slices)
        obj.func = obj._evaluate
        return obj

    def slice_index(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t + 1e-12 * max(1.0, abs(t)), side="right")) - 1
        return min(max(k, 0), self.times.size - 1)

    def time_key(self, t: float):
        return None if self.autonomous else self.slice_index(t)

    def slice_at(self, t: float) -> np.ndarray:
        return self.slices[self.slice_index(t)]

    def _evaluate(self, t, x):
        return interpolate(self.grid, self.slice_at(t), x)


def sign_field() -> VelocityField:
    """``b(x) = sgn x`` on the line; the flow opens a vacuum ``(-t, t)``."""
    return VelocityField(lambda t, x: np.sign(x), dim=1, C0=1.0, C1=0.0, name="sign", C2=2.0)


def line_field() -> VelocityField:
    """``b(x) = sgn(x_1) (1, 1)`` in the plane."""
    def func(t, x):
        s = np.sign(x[:, 0])
        return np.stack([s, s], axis=-1)
    return VelocityField(func, dim=2, C0=np.sqrt(2.0), C1=0.0, name="line", C2=2.0 * np.sqrt(2.0))


def diagonal_field() -> VelocityField:
    """Quadrant field: (1,1), (1,0), (0,1), (-1,-1) on the four open quadrants."""
    def func(t, x):
        right = x[:, 0] > 0
        up = x[:, 1] > 0
        b1 = np.where(up, 1.0, np.where(right, 0.0, -1.0))
        b2 = np.where(right, 1.0, np.where(up, 0.0, -1.0))
        return np.stack([b1, b2], axis=-1)
    return VelocityField(func, dim=2, C0=np.sqrt(2.0), C1=0.0, name="diagonal", C2=2.0 * np.sqrt(2.0))


def linear_field(matrix, offset=None) -> VelocityField:
    """``b(x) = A x + v``; admissible when the off-diagonal entries of ``A`` are >= 0."""
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    d = a.shape[0]
    v = np.zeros(d) if offset is None else np.atleast_1d(np.asarray(offset, dtype=float))
    off = a - np.diag(np.diag(a))
    if np.any(off < 0):
        raise ValueError("off-diagonal entries of A must be nonnegative")
    c1 = max(0.0, float(-np.min(np.diag(a))))
    c0 = float(max(np.linalg.norm(a, 2), np.linalg.norm(v)))
    return VelocityField(lambda t, x: x @ a.T + v, dim=d, C0=c0, C1=c1, name="linear",
                         params={"matrix": a.tolist(), "offset": v.tolist()})


def constant_field(v) -> VelocityField:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return VelocityField(lambda t, x: np.broadcast_to(v, x.shape).copy(), dim=v.size,
                         C0=float(np.linalg.norm(v)), C1=0.0, name="constant", C2=0.0,
                         params={"v": v.tolist()})


def zero_field(dim: int = 1) -> VelocityField:
    f = constant_field(np.zeros(dim))
    f.name = "zero"
    return f


def step_field(position: Callable[[float], float], low: float = -1.0, high: float = 0.0) -> VelocityField:
    """1-D increasing step ``b(t, x) = low`` for ``x <= position(t)``, ``high`` otherwise.

    With ``low=-1, high=0`` this is the frozen Burgers drift ``-1{x <= c(t)}``.
    """
    def func(t, x):
        return np.where(x <= position(t), low, high)
    return VelocityField(func, dim=1, C0=max(abs(low), abs(high)), C1=0.0, name="step",
                         autonomous=False, C2=abs(high - low))


CATALOG = {
    "sign": {"factory": sign_field, "dim": 1, "params": {},
             "doc": "b(x) = sgn x; vacuum (-t, t) opens at the origin"},
    "line": {"factory": line_field, "dim": 2, "params": {},
             "doc": "b(x) = sgn(x1) (1, 1)"},
    "diagonal": {"factory": diagonal_field, "dim": 2, "params": {},
                 "doc": "quadrant field (1,1), (1,0), (0,1), (-1,-1)"},
    "linear": {"factory": linear_field, "dim": None, "params": {"matrix": "dxd list", "offset": "length-d list"},
               "doc": "b(x) = A x + v, off-diagonal entries of A nonnegative"},
    "constant": {"factory": constant_field, "dim": None, "params": {"v": "length-d list"},
                 "doc": "translation b = v"},
    "zero": {"factory": zero_field, "dim": None, "params": {"dim": "int"},
             "doc": "b = 0"},
    "user-grid": {"factory": GriddedField.from_slices, "dim": None,
                  "params": {"grid": "grid spec", "times": "list", "slices": "nested list"},
                  "doc": "time-sliced samples on a user grid (2d or any d)"},
    "burgers": {"factory": None, "dim": 1, "params": {},
                "doc": "nonlinearity f(t,x,u) = -u, g = 0 (Burgers-type transport)"},
}


def catalog_entries(filter_text: str | None = None) -> list[tuple[str, dict]]:
    """Catalog rows, optionally restricted by a filter such as ``"2d"`` or a name fragment."""
    rows = []
    for name, entry in CATALOG.items():
        if filter_text:
            f = filter_text.lower()
            if f.endswith("d") and f[:-1].isdigit():
                want = int(f[:-1])
                if entry["dim"] is not None and entry["dim"] != want:
                    continue
                if entry["dim"] is None and name != "user-grid":
                    continue
            elif f not in name and f not in entry["doc"].lower():
                continue
        rows.append((name, entry))
    return rows


def make_field(name: str, params: dict | None = None) -> VelocityField:
    params = dict(params or {})
    if name not in CATALOG or CATALOG[name]["factory"] is None:
        raise KeyError(f"unknown field {name!r}")
    if name == "linear":
        return linear_field(params["matrix"], params.get("offset"))
    if name == "constant":
        return constant_field(params["v"])
    if name == "zero":
        return zero_field(int(params.get("dim", 1)))
    if name == "user-grid":
        g = params["grid"]
        grid = Grid(g["origin"], g["spacing"], g["shape"])
        return GriddedField.from_slices(grid, params["times"], params["slices"],
                                        C0=params.get("C0", 1.0), C1=params.get("C1", 0.0))
    return CATALOG[name]["factory"]()
