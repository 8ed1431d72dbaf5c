"""Shock selection for ``-u_t + u u_x = 0`` with terminal datum ``1{x <= 0}``.

Every ``u_c = 1{x <= c(t)}`` with ``c(T) = 0`` and ``-c'`` in ``[0, 1]`` is a
solution. The viscous equation

    -u_t + u u_x = eps (u_xx + theta(t) u_x^2)

selects the shock speed ``C(theta)``; choosing ``theta = C^{-1}(-c')``
selects ``u_c``. The substitution ``u = log(theta v + 1) / theta`` turns the
viscous equation into a conservation law for ``v`` with flux ``F``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq

from .regularize import bump
from .stochastic import brownian_increments

__all__ = [
    "ShockPath",
    "SelectionProfile",
    "ViscousRun",
    "FBSDEStats",
    "speed_map_C",
    "speed_map_C_printed",
    "theta_for_path",
    "u_c_exact",
    "x_c_exact",
    "transform_f",
    "transform_f_inverse",
    "flux_F",
    "rankine_hugoniot",
    "smoothed_heaviside",
    "locate_shock",
    "viscous_solve",
    "cole_hopf_reference",
    "fbsde_simulate",
]

_SERIES_CUTOFF = 1e-4


def speed_map_C(theta):
    """Shock speed ``(theta e^theta - e^theta + 1) / (theta (e^theta - 1))``.

    Increases from 0 (``theta -> -inf``) to 1 (``theta -> inf``) with
    ``C(0) = 1/2`` and ``C(theta) + C(-theta) = 1``. Written as
    ``1 / (1 - e^-theta) - 1 / theta``, with a Taylor series near zero.
    """
    th = np.asarray(theta, dtype=float)
    out = np.empty_like(th)
    small = np.abs(th) < _SERIES_CUTOFF
    ts = th[small]
    out[small] = 0.5 + ts / 12.0 - ts ** 3 / 720.0 + ts ** 5 / 30240.0
    tb = th[~small]
    with np.errstate(over="ignore"):
        out[~small] = -1.0 / np.expm1(-tb) - 1.0 / tb
    return out if out.ndim else float(out)


def speed_map_C_printed(theta):
    """The variant with numerator ``theta e^theta - e^theta - 1``, kept for comparison only."""
    th = np.asarray(theta, dtype=float)
    return (th * np.exp(th) - np.exp(th) - 1.0) / (th * np.expm1(th))


def transform_f(theta: float, v):
    """``f(v) = log(theta v + 1) / theta`` (identity at ``theta = 0``)."""
    v = np.asarray(v, dtype=float)
    if theta == 0.0:
        return v.copy()
    arg = theta * v
    if np.any(arg <= -1.0):
        raise ValueError("theta v + 1 must stay positive")
    return np.log1p(arg) / theta


def transform_f_inverse(theta: float, u):
    u = np.asarray(u, dtype=float)
    if theta == 0.0:
        return u.copy()
    return np.expm1(theta * u) / theta


def flux_F(theta: float, v):
    """``F(v) = ((theta v + 1) log(theta v + 1) - theta v) / theta^2`` with ``F' = f``."""
    v = np.asarray(v, dtype=float)
    if abs(theta) < 1e-8:
        return 0.5 * v ** 2 - theta * v ** 3 / 6.0
    a = theta * v
    if np.any(a <= -1.0):
        raise ValueError("theta v + 1 must stay positive")
    return ((1.0 + a) * np.log1p(a) - a) / theta ** 2


def rankine_hugoniot(theta: float) -> dict:
    """Shock speed of the ``v`` conservation law from the states ``f^{-1}(1)`` (left) and ``f^{-1}(0)``.

    ``"derived"`` is ``(F(v_left) - F(v_right)) / (v_left - v_right)``, which
    equals ``C(theta)``. ``"printed"`` is the quotient with the two states
    swapped in the numerator only, which has the opposite sign.
    """
    v1 = float(transform_f_inverse(theta, 1.0))
    v0 = float(transform_f_inverse(theta, 0.0))
    f1, f0 = float(flux_F(theta, v1)), float(flux_F(theta, v0))
    return {"derived": (f1 - f0) / (v1 - v0), "printed": (f0 - f1) / (v1 - v0), "C": speed_map_C(theta)}


@dataclass
class ShockPath:
    """Shock curve ``c`` on ``[0, T]`` sampled at ``times``, with ``c(T) = 0``."""

    times: np.ndarray
    c: np.ndarray
    dc: np.ndarray
    T: float
    margin: float = 1e-3

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.dc = np.asarray(self.dc, dtype=float)
        if abs(self.c[-1]) > 1e-12 or abs(self.times[-1] - self.T) > 1e-12:
            raise ValueError("shock path must end at c(T) = 0")
        speed = -self.dc
        if np.any(speed <= self.margin) or np.any(speed >= 1.0 - self.margin):
            raise ValueError("-c' must lie strictly inside (0, 1)")
        if not np.all(np.isfinite(np.gradient(self.dc, self.times))):
            raise ValueError("c'' is not integrable on the samples")

    @classmethod
    def constant_speed(cls, speed: float, T: float = 1.0, n: int = 101) -> ShockPath:
        t = np.linspace(0.0, T, n)
        return cls(t, speed * (T - t), np.full(n, -speed), T)

    @classmethod
    def from_callable(cls, c: Callable, dc: Callable, T: float = 1.0, n: int = 101) -> ShockPath:
        t = np.linspace(0.0, T, n)
        return cls(t, np.array([c(s) for s in t]), np.array([dc(s) for s in t]), T)

    def __call__(self, t):
        return np.interp(t, self.times, self.c)

    def speed(self, t):
        return -np.interp(t, self.times, self.dc)


@dataclass
class SelectionProfile:
    """``theta(t)`` on the shock-path samples with ``C(theta) = -c'``."""

    times: np.ndarray
    theta: np.ndarray
    path: ShockPath
    residual: float

    def __call__(self, t) -> float:
        return float(np.interp(t, self.times, self.theta))

    def derivative(self, t) -> float:
        return float(np.interp(t, self.times, np.gradient(self.theta, self.times)))


def _invert_C(target: float) -> float:
    if not 0.0 < target < 1.0:
        raise ValueError("speed must lie in (0, 1)")
    if target == 0.5:
        return 0.0
    lo, hi = -1.0, 1.0
    while speed_map_C(lo) > target:
        lo *= 2.0
    while speed_map_C(hi) < target:
        hi *= 2.0
    return brentq(lambda th: speed_map_C(th) - target, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                  maxiter=500)


def theta_for_path(path: ShockPath) -> SelectionProfile:
    """Invert the speed map sample by sample; the round-trip residual is recorded."""
    speeds = -path.dc
    theta = np.array([_invert_C(float(s)) for s in speeds])
    resid = float(np.max(np.abs(speed_map_C(theta) - speeds)))
    if resid > 1e-10:
        raise ValueError(f"speed map inversion failed (residual {resid:.2e})")
    return SelectionProfile(path.times, theta, path, resid)


def u_c_exact(c: ShockPath, t, x):
    """``1{x <= c(t)}``; the jump value sits on the closed lower side."""
    return (np.asarray(x, dtype=float) <= c(t)).astype(float)


def x_c_exact(c: ShockPath, t: float, x, s):
    """Characteristics of ``u_c`` from ``(t, x)``: speed -1 left of the shock, along it on it, 0 right."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    ct = float(c(t))
    T = c.T
    xx, ss = np.broadcast_arrays(x[..., None], s) if (x.ndim and s.ndim) else np.broadcast_arrays(x, s)
    on = np.isclose(xx, ct, atol=1e-12)
    left = xx - (ss - t)
    along = xx - ct * (ss - t) / (T - t) if T > t else xx
    return np.where(on, along, np.where(xx < ct, left, xx))


def smoothed_heaviside(eps: float, n: int = 4001) -> Callable:
    """``1_{(-inf, 0)}`` convolved with the centred bump of radius ``eps``."""
    z = np.linspace(-1.0, 1.0, n)
    dens = bump(z)
    cdf = cumulative_trapezoid(dens, z, initial=0.0)
    cdf /= cdf[-1]

    def u(x):
        x = np.asarray(x, dtype=float)
        return 1.0 - np.interp(x / eps, z, cdf)
    return u


def locate_shock(x: np.ndarray, u: np.ndarray, level: float = 0.5) -> float:
    """First crossing of ``level`` by a profile going from above to below, linearly interpolated."""
    above = u >= level
    idx = np.nonzero(above[:-1] & ~above[1:])[0]
    if idx.size == 0:
        return float("nan")
    i = int(idx[0])
    u0, u1 = u[i], u[i + 1]
    return float(x[i] + (u0 - level) / (u0 - u1) * (x[i + 1] - x[i]))


@dataclass
class ViscousRun:
    """Slices ``values[k] = u(times[k], x)`` of a backward viscous solve and the shock track."""

    eps: float
    x: np.ndarray
    dt: float
    times: np.ndarray
    values: np.ndarray
    shock: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    def measured_speed(self) -> float:
        """``-slope`` of a least-squares line through the shock positions."""
        ok = np.isfinite(self.shock)
        slope = np.polyfit(self.times[ok], self.shock[ok], 1)[0]
        return float(-slope)

    def at(self, t: float, x) -> np.ndarray:
        """Space-time linear interpolation of the stored slices."""
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        t0, t1 = self.times[k], self.times[k + 1]
        w = (t - t0) / (t1 - t0)
        a = np.interp(x, self.x, self.values[k])
        b = np.interp(x, self.x, self.values[k + 1])
        return (1.0 - w) * a + w * b

    def slope(self, t: float, x) -> np.ndarray:
        """``u_x`` from centered grid differences, interpolated like :meth:`at`."""
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        t0, t1 = self.times[k], self.times[k + 1]
        w = (t - t0) / (t1 - t0)
        a = np.interp(x, self.x, np.gradient(self.values[k], self.x))
        b = np.interp(x, self.x, np.gradient(self.values[k + 1], self.x))
        return (1.0 - w) * a + w * b


def _march(eps: float, x: np.ndarray, T: float, dt_max: float, out_times, w_T: np.ndarray, flux, extra,
           left, right, scheme: str, guard):
    """Explicit backward march of ``w_tau + flux(t, w)_x = eps w_xx + extra(t, w, w_x)``, ``tau = T - t``."""
    h = float(x[1] - x[0])
    out_times = np.sort(np.asarray(out_times, dtype=float))[::-1]
    w = w_T.copy()
    t = T
    slices = {}
    k = 0
    while k < len(out_times) and out_times[k] >= t - 1e-12:
        slices[k] = w.copy()
        k += 1
    while k < len(out_times):
        target = out_times[k]
        n = max(1, int(np.ceil((t - target) / dt_max - 1e-9)))
        step = (t - target) / n
        for _ in range(n):
            fl = flux(t, w)
            if scheme == "upwind":
                div = np.empty_like(w)
                div[1:] = (fl[1:] - fl[:-1]) / h
                div[0] = 0.0
            else:
                div = np.zeros_like(w)
                div[1:-1] = (fl[2:] - fl[:-2]) / (2.0 * h)
            lap = np.zeros_like(w)
            lap[1:-1] = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / h ** 2
            grad = np.zeros_like(w)
            grad[1:-1] = (w[2:] - w[:-2]) / (2.0 * h)
            rhs = -div + eps * lap + extra(t, w, grad)
            w = w + step * rhs
            t -= step
            w[0], w[-1] = left(t), right(t)
            guard(t, w)
        slices[k] = w.copy()
        k += 1
    order = np.argsort(out_times)
    return out_times[order], np.stack([slices[i] for i in order])


def _default_times(T: float, n: int = 101) -> np.ndarray:
    return np.linspace(0.0, T, n)


def viscous_solve(profile: SelectionProfile, eps: float, x: np.ndarray, dt: float | None = None,
                  u_T: Callable | None = None, out_times=None, scheme: str = "upwind") -> ViscousRun:
    """Backward explicit finite differences for the selected viscous equation.

    Flux ``u^2 / 2`` differenced upwind (or centered), diffusion and
    ``|u_x|^2`` centered, Dirichlet values 1 and 0 at the ends. The default
    step is ``min(h / max|u|, h^2 / (4 eps))``.

    Raises
    ------
    ValueError
        If ``dt`` violates that bound.
    FloatingPointError
        If the solution leaves ``[0, 1]`` (blow-up guard).
    """
    x = np.asarray(x, dtype=float)
    h = float(x[1] - x[0])
    T = profile.path.T
    u_T = smoothed_heaviside(eps) if u_T is None else u_T
    uT = np.asarray(u_T(x), dtype=float)
    umax = max(float(np.max(np.abs(uT))), 1e-12)
    dt_max = min(h / umax, h ** 2 / (4.0 * eps))
    if dt is None:
        dt = dt_max
    elif dt > dt_max * (1 + 1e-12):
        raise ValueError(f"CFL violation: dt={dt:g} exceeds {dt_max:g}")
    out_times = _default_times(T) if out_times is None else out_times

    def guard(t, w):
        if not np.all(np.isfinite(w)) or w.min() < -1e-8 or w.max() > 1 + 1e-8:
            raise FloatingPointError(f"viscous solution left [0, 1] at t={t:g}")

    def extra(t, w, grad):
        return eps * profile(t) * grad ** 2

    times, vals = _march(eps, x, T, dt, out_times, uT, lambda t, w: 0.5 * w ** 2, extra,
                         lambda t: 1.0, lambda t: 0.0, scheme, guard)
    shock = np.array([locate_shock(x, v) for v in vals])
    return ViscousRun(eps, x, dt, times, vals, shock, info={"scheme": scheme, "dt_max": dt_max})


def cole_hopf_reference(profile: SelectionProfile, eps: float, x: np.ndarray, dt: float | None = None,
                        u_T: Callable | None = None, out_times=None, scheme: str = "upwind") -> ViscousRun:
    """Solve the transformed conservation law for ``v`` and map back ``u = f(t, v)``.

    ``-v_t + F(t, v)_x = d_t f / d_v f + eps v_xx``, where the source equals
    ``-theta'(t) F(t, v)``. With ``theta = 0`` every operation coincides with
    :func:`viscous_solve`.
    """
    x = np.asarray(x, dtype=float)
    h = float(x[1] - x[0])
    T = profile.path.T
    u_T = smoothed_heaviside(eps) if u_T is None else u_T
    uT = np.asarray(u_T(x), dtype=float)
    vT = transform_f_inverse(profile(T), uT)
    vmax = max(float(np.max(np.abs(transform_f(profile(T), vT)))), 1e-12)
    dt_max = min(h / vmax, h ** 2 / (4.0 * eps))
    if dt is None:
        dt = dt_max
    elif dt > dt_max * (1 + 1e-12):
        raise ValueError(f"CFL violation: dt={dt:g} exceeds {dt_max:g}")
    out_times = _default_times(T) if out_times is None else out_times
    zero = bool(np.all(profile.theta == 0.0))

    def flux(t, w):
        return 0.5 * w ** 2 if zero else flux_F(profile(t), w)

    def extra(t, w, grad):
        if zero:
            return eps * 0.0 * grad ** 2
        # backward time: d/dtau of theta is -theta'
        return profile.derivative(t) * flux_F(profile(t), w)

    def guard(t, w):
        th = profile(t)
        if not np.all(np.isfinite(w)) or np.any(th * w <= -1.0):
            raise FloatingPointError(f"theta v + 1 left the positive half-line at t={t:g}")

    times, vals = _march(eps, x, T, dt, out_times, vT, flux, extra,
                         lambda t: float(transform_f_inverse(profile(t), 1.0)), lambda t: 0.0, scheme, guard)
    u = np.stack([transform_f(profile(t), v) for t, v in zip(times, vals)])
    shock = np.array([locate_shock(x, v) for v in u])
    return ViscousRun(eps, x, dt, times, u, shock, info={"scheme": scheme, "v": vals, "dt_max": dt_max})


@dataclass
class FBSDEStats:
    """Summary of simulated forward-backward paths from ``(t, points)``.

    ``distance`` is ``max_s h sum_x mean_p |X - X^c|`` over the stored times.
    ``residual_mean`` is the path mean of the summed increments
    ``dU - Z dW + theta Z^2 / 2 ds``; ``residual_mean_printed`` uses the
    opposite sign on ``dU``.
    """

    times: np.ndarray
    points: np.ndarray
    X_mean: np.ndarray
    U_mean: np.ndarray
    distance: float
    residual_mean: float
    residual_mean_printed: float
    dt: float
    info: dict = field(default_factory=dict)


def fbsde_simulate(profile: SelectionProfile, eps: float, run: ViscousRun, t: float, points, n_paths: int,
                   seed: int, dt: float, out_times=None) -> FBSDEStats:
    """Euler-Maruyama for ``dX = -u(s, X) ds + sqrt(2 eps) dW`` with ``u`` read from ``run``.

    ``U = u(s, X)`` and ``Z = sqrt(2 eps) u_x(s, X)`` along the paths; the
    backward equation is checked in its Ito form ``dU = Z dW - theta Z^2 / 2 ds``.
    """
    if abs(run.eps - eps) > 1e-15:
        raise ValueError("run was computed with a different eps")
    if run.times[0] > t + 1e-12 or run.times[-1] < profile.path.T - 1e-12:
        raise ValueError("run does not cover [t, T]")
    pts = np.asarray(points, dtype=float).reshape(-1)
    if pts.min() < run.x[0] or pts.max() > run.x[-1]:
        raise ValueError("start points outside the run grid")
    T = profile.path.T
    n = int(np.ceil((T - t) / dt - 1e-9))
    step = (T - t) / n
    s_grid = t + step * np.arange(n + 1)
    out_times = s_grid[:: max(1, n // 20)] if out_times is None else np.asarray(out_times, dtype=float)
    X = np.broadcast_to(pts, (n_paths, pts.size)).copy()
    sig = np.sqrt(2.0 * eps)
    U = run.at(t, X)
    resid = np.zeros_like(X)
    resid_printed = np.zeros_like(X)
    dist = 0.0
    xm, um = [], []
    h = float(pts[1] - pts[0]) if pts.size > 1 else 1.0
    rec = set(np.searchsorted(s_grid, out_times - 1e-12).tolist())

    def record(k, s):
        nonlocal dist
        xc = x_c_exact(profile.path, t, pts, s)
        dist = max(dist, float(h * np.sum(np.mean(np.abs(X - xc), axis=0))))
        xm.append(X.mean(axis=0))
        um.append(U.mean(axis=0))

    record(0, t)
    for k in range(n):
        s = s_grid[k]
        dw = brownian_increments(seed, k, (n_paths, 1), step)[:, 0:1]
        Z = sig * run.slope(s, X)
        X = X - U * step + sig * dw
        U_new = run.at(s + step, X)
        dU = U_new - U
        drift = 0.5 * profile(s) * Z ** 2 * step
        resid += dU - Z * dw + drift
        resid_printed += -dU - Z * dw + drift
        U = U_new
        if k + 1 in rec:
            record(k + 1, s + step)
    return FBSDEStats(np.asarray(out_times), pts, np.array(xm), np.array(um), dist,
                      float(np.mean(resid)), float(np.mean(resid_printed)), step,
                      info={"seed": seed, "n_paths": n_paths, "eps": eps})
