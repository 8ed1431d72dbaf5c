from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from monoflow.burgers import ShockPath, u_c_exact
from monoflow.monotone_core import Grid
from monoflow.nonlinear import (LatticeIterate, Nonlinearity, burgers, extract_characteristics,
                                fixed_point_map, lattice_max, solve_extremal)

T = 1.0


def step(at=0.0):
    return lambda x: (np.asarray(x)[..., 0] <= at).astype(float)


def ramp(x):
    # Lipschitz 1/4, decreasing from 1 to 0 on [-1, 3]
    return np.clip((3.0 - np.asarray(x)[..., 0]) / 4.0, 0.0, 1.0)


@pytest.fixture(scope="module")
def grid():
    return Grid.from_bounds([-2], [2], 0.01)


@pytest.fixture(scope="module")
def times():
    return np.linspace(0.0, T, 11)


def constant_iterate(grid, times, level):
    return LatticeIterate(grid, times, np.full((len(times),) + grid.shape, float(level)))


def test_map_unit_drift_translates_step(grid, times):
    v = fixed_point_map(constant_iterate(grid, times, 1.0), burgers(), step(), T)
    x = grid.axis(0)
    for k, t in enumerate(times):
        assert np.array_equal(v.values[k], (x <= T - t + 1e-9).astype(float))


def test_map_zero_drift_freezes_step(grid, times):
    v = fixed_point_map(constant_iterate(grid, times, 0.0), burgers(), step(), T)
    assert np.array_equal(v.values, np.broadcast_to((grid.axis(0) <= 0).astype(float), v.values.shape))


def test_map_rejects_non_lattice_input(grid, times):
    vals = np.broadcast_to((grid.axis(0) >= 0).astype(float), (len(times),) + grid.shape).copy()
    with pytest.raises(ValueError):
        fixed_point_map(LatticeIterate(grid, times, vals), burgers(), step(), T)


@settings(max_examples=15)
@given(a=st.floats(-1.5, 1.5), b=st.floats(-1.5, 1.5), lo=st.floats(0.0, 1.0), hi=st.floats(0.0, 1.0))
def test_map_is_order_preserving(a, b, lo, hi):
    g = Grid.from_bounds([-2], [2], 0.05)
    ts = np.linspace(0.0, T, 6)
    x = g.axis(0)
    lo, hi = min(lo, hi), max(lo, hi)
    # two ordered decreasing iterates: u <= w
    u = np.broadcast_to(np.where(x <= min(a, b), lo, 0.0), (len(ts),) + g.shape).copy()
    w = np.broadcast_to(np.where(x <= max(a, b), hi, 0.0), (len(ts),) + g.shape).copy()
    assert np.all(u <= w)
    su = fixed_point_map(LatticeIterate(g, ts, u), burgers(), step(), T)
    sw = fixed_point_map(LatticeIterate(g, ts, w), burgers(), step(), T)
    assert np.all(su.values <= sw.values + 1e-12)


@pytest.mark.parametrize("direction, front", [("from_top", lambda t: T - t), ("from_bottom", lambda t: 0.0)])
def test_burgers_extremal_solutions(grid, times, direction, front):
    res = solve_extremal(burgers(), step(), grid, times, direction)
    assert res.converged and res.iterations <= 2 and res.monotone
    x = grid.axis(0)
    for k, t in enumerate(times):
        assert np.array_equal(res.solution.components()[k, :, 0], (x <= front(t) + 1e-9).astype(float))


@pytest.mark.parametrize("direction", ["from_top", "from_bottom"])
def test_no_coefficients_returns_terminal_data(grid, times, direction):
    nl = Nonlinearity(lambda t, x, u: np.zeros_like(u), None, name="zero")
    res = solve_extremal(nl, ramp, grid, times, direction)
    assert res.converged
    assert np.allclose(res.solution.components()[..., 0], ramp(grid.points())[None], atol=1e-12)


def characteristics_reference(t, x):
    """``u = u_T(x - u (T - t))`` solved pointwise; valid before characteristics cross."""
    return np.array([brentq(lambda u: u - ramp(np.array([[xi - u * (T - t)]]))[0], -0.1, 1.1) for xi in x])


def test_smooth_ramp_short_horizon_unique(times):
    g = Grid.from_bounds([-2], [4], 0.01)
    top = solve_extremal(burgers(), ramp, g, times, "from_top", max_iter=40, tol=1e-6)
    bot = solve_extremal(burgers(), ramp, g, times, "from_bottom", max_iter=40, tol=1e-6)
    assert top.converged and bot.converged
    gap = top.solution.l1_distance(bot.solution).max()
    assert gap < 5e-3
    x = g.axis(0)
    inner = (x > -1.0) & (x < 2.0)
    for k in (0, 5):
        ref = characteristics_reference(times[k], x[inner])
        assert np.max(np.abs(top.solution.components()[k, inner, 0] - ref)) < 0.03


def shock_iterate(grid, times, speed):
    c = ShockPath.constant_speed(speed, T=T, n=len(times))
    # closed lower side at the jump, robust to rounding of c on grid nodes
    return c, LatticeIterate(grid, times, np.stack([(grid.axis(0) <= c(t) + 1e-9).astype(float) for t in times]))


@pytest.mark.parametrize("n", [11, 51])
def test_lattice_max_of_shifted_subsolutions(grid, n):
    times = np.linspace(0.0, T, n)
    c1, u1 = shock_iterate(grid, times, 0.25)
    c2, u2 = shock_iterate(grid, times, 0.75)
    # the residual check mixes centered time and upwind space differences, so the
    # mollifier must span many cells (consistency error ~ h / eps^2)
    out = lattice_max(u1, u2, burgers(), step(), eps=0.3)
    x = grid.axis(0)
    expected = np.stack([(x <= max(c1(t), c2(t)) + 1e-9).astype(float) for t in times])
    assert np.array_equal(out.values.values, expected)
    assert out.ok and out.report.violation == 0.0


def test_lattice_max_identity(grid, times):
    c = ShockPath.constant_speed(0.5, T=T, n=len(times))
    u = LatticeIterate(grid, times, np.stack([u_c_exact(c, t, grid.axis(0)) for t in times]))
    out = lattice_max(u, u, burgers(), step(), eps=0.02)
    assert np.array_equal(out.values.values, u.values)


def test_lattice_max_grid_mismatch(grid, times):
    u = constant_iterate(grid, times, 0.0)
    v = constant_iterate(Grid.from_bounds([-2], [2], 0.02), times, 0.0)
    with pytest.raises(ValueError):
        lattice_max(u, v, burgers(), step(), eps=0.02)


def test_characteristics_without_coefficients(grid, times):
    nl = Nonlinearity(lambda t, x, u: np.zeros_like(u), None, name="zero")
    res = solve_extremal(nl, ramp, grid, times, "from_top")
    pts = np.array([[-1.0], [0.0], [0.5]])
    ch = extract_characteristics(res.solution, nl, ramp, 0.0, pts)
    assert np.allclose(ch.X, pts[None], atol=1e-12)
    assert np.allclose(ch.U[..., 0], ramp(pts)[None], atol=1e-12)
    assert ch.terminal_defect < 1e-12


def test_characteristics_of_maximal_burgers_solution(grid, times):
    res = solve_extremal(burgers(), step(), grid, times, "from_top")
    pts = np.array([[-1.0], [1.5]])
    ch = extract_characteristics(res.solution, burgers(), step(), 0.0, pts)
    # left of the front the state is 1 and the path moves at speed -1; right of it nothing moves
    assert np.allclose(ch.X[:, 0, 0], -1.0 - ch.times, atol=0.02)
    assert np.allclose(ch.X[:, 1, 0], 1.5, atol=1e-12)
    assert np.allclose(ch.U[:, 0, 0], 1.0) and np.allclose(ch.U[:, 1, 0], 0.0)
    assert ch.backward_residual < 1e-9


def test_characteristics_match_shooting_on_ramp(times):
    g = Grid.from_bounds([-2], [4], 0.01)
    res = solve_extremal(burgers(), ramp, g, times, "from_top", max_iter=40, tol=1e-6)
    pts = np.array([[-0.5], [0.5], [1.5]])
    ch = extract_characteristics(res.solution, burgers(), ramp, 0.0, pts)
    # shooting: U is constant, X is a straight line with slope -U; pick U with U = u_T(X_T)
    u0 = characteristics_reference(0.0, pts[:, 0])
    X_ref = pts[None, :, 0] - u0[None] * ch.times[:, None]
    assert np.max(np.abs(ch.X[..., 0] - X_ref)) < 0.05
    assert np.max(np.abs(ch.U[..., 0] - u0[None])) < 0.03
    assert ch.terminal_defect < 0.03
