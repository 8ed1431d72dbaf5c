from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from monoflow.fields import constant_field, line_field, linear_field, sign_field, zero_field
from monoflow.flow_engine import (check_comparison, integrate_regularized_flow, maximal_minimal_flow,
                                  measure_bound, semigroup_residual, trajectories)
from monoflow.monotone_core import Grid


@pytest.fixture(scope="module")
def sign_flows():
    g = Grid.from_bounds([-1], [1], 0.02)
    times = np.linspace(0.0, 0.5, 6)
    return g, times, maximal_minimal_flow(sign_field(), 0.0, 0.5, g, times=times)


def test_linear_decay_closed_form():
    g = Grid.from_bounds([-1], [1], 0.05)
    for side in ("upper", "lower"):
        fl = integrate_regularized_flow(linear_field([[-1.0]]), side, 0.1, 0.0, 1.0, g)
        assert np.allclose(fl.at(1.0)[:, 0], g.axis(0) * np.exp(-1.0), atol=1e-6)


def test_translation_exact():
    g = Grid.from_bounds([-1, -1], [1, 1], 0.25)
    fl = integrate_regularized_flow(constant_field([0.5, -0.25]), "upper", 0.5, 0.2, 1.0, g)
    assert np.allclose(fl.at(1.0), g.points() + 0.8 * np.array([0.5, -0.25]), atol=1e-12)


def test_sign_field_extreme_selections_at_origin():
    g = Grid.from_bounds([-1], [1], 0.02)
    i0 = g.index_of([0.0])[0]
    up = integrate_regularized_flow(sign_field(), "upper", 0.04, 0.0, 0.5, g)
    lo = integrate_regularized_flow(sign_field(), "lower", 0.04, 0.0, 0.5, g)
    assert up.at(0.5)[i0, 0] == pytest.approx(0.5, abs=0.04)
    assert lo.at(0.5)[i0, 0] == pytest.approx(-0.5, abs=0.04)


def test_cfl_and_direction_errors():
    g = Grid.from_bounds([-1], [1], 0.1)
    with pytest.raises(ValueError):
        integrate_regularized_flow(sign_field(), "upper", 0.2, 0.0, 1.0, g, dt=0.5)
    with pytest.raises(ValueError):
        integrate_regularized_flow(sign_field(), "upper", 0.2, 1.0, 0.0, g)


def test_maximal_minimal_sign_gap(sign_flows):
    g, times, mm = sign_flows
    h = 0.02
    i0 = g.index_of([0.0])[0]
    up, lo = mm
    for k, t in enumerate(times):
        assert mm.gap[k, i0] == pytest.approx(2 * t, abs=2 * h)
    away = np.abs(g.axis(0)) > 4 * h
    assert np.max(mm.gap[:, away]) < 1e-9
    assert up.slices_increasing() and lo.slices_increasing()
    assert check_comparison(lo, up).ok
    x = g.axis(0)[away]
    assert np.allclose(up.at(0.5)[away, 0], x + 0.5 * np.sign(x), atol=1e-9)


def test_eps_monotonicity_recorded(sign_flows):
    assert sign_flows[2].monotonicity_defect <= 1e-6


def test_line_field_forward_translation():
    g = Grid.from_bounds([-1, -1], [1, 1], 0.05)
    up, lo = maximal_minimal_flow(line_field(), 0.0, 0.3, g, eps_schedule=[0.4, 0.2, 0.1])
    start = g.points()
    right = start[:, 0] > 0.2
    assert np.allclose(up.at(0.3)[right], start[right] + 0.3, atol=1e-9)
    assert np.allclose(lo.at(0.3)[right], start[right] + 0.3, atol=1e-9)


def test_schedule_validation():
    g = Grid.from_bounds([-1], [1], 0.1)
    with pytest.raises(ValueError):
        maximal_minimal_flow(sign_field(), 0.0, 0.5, g, eps_schedule=[0.2, 0.4])
    with pytest.raises(ValueError):
        maximal_minimal_flow(sign_field(), 0.0, 0.5, g, eps_schedule=[0.4, 0.1])


def test_comparison_ordered_starts():
    g = Grid.from_bounds([-1], [1], 0.05)
    pts = g.points()
    a = integrate_regularized_flow(sign_field(), "upper", 0.1, 0.0, 0.5, g, times=np.linspace(0, 0.5, 5),
                                   points=pts)
    b = integrate_regularized_flow(sign_field(), "upper", 0.1, 0.0, 0.5, g, times=np.linspace(0, 0.5, 5),
                                   points=pts + 0.01)
    rep = check_comparison(a, b)
    assert rep.ok and rep.first_violation is None
    same = check_comparison(a, a)
    assert same.ok and same.max_violation == 0.0
    flipped = check_comparison(b, a)
    assert not flipped.ok and flipped.first_violation[0] == 0


def test_semigroup_residuals():
    g = Grid.from_bounds([-1], [1], 0.02)
    times = np.linspace(0.0, 1.0, 11)
    lin = integrate_regularized_flow(linear_field([[-1.0]]), None, None, 0.0, 1.0, g, times=times)
    assert semigroup_residual(lin, 0.0, 0.4, 1.0) <= 1e-4
    tr = integrate_regularized_flow(constant_field([0.3]), None, None, 0.0, 1.0, g, times=times)
    assert semigroup_residual(tr, 0.0, 0.5, 1.0) <= 0.02
    with pytest.raises(ValueError):
        semigroup_residual(lin, 0.0, 0.7, 0.5)


def test_measure_bound_examples(sign_flows):
    g, times, mm = sign_flows
    rep = measure_bound(mm.maximal, (np.array([-0.25]), np.array([0.25])), 0.0, 0.5)
    assert rep.measure == pytest.approx(0.5)
    assert rep.preimage <= 2 * 0.02 and rep.ok
    gz = Grid.from_bounds([-1], [1], 0.01)
    ident = integrate_regularized_flow(zero_field(1), None, None, 0.0, 1.0, gz)
    mask = np.abs(gz.axis(0)) <= 0.2
    rep0 = measure_bound(ident, mask, 0.0, 1.0)
    assert rep0.preimage == pytest.approx(rep0.measure)


def test_measure_bound_linear_expansion_is_sharp():
    g = Grid.from_bounds([-3], [3], 0.002)
    fl = integrate_regularized_flow(linear_field([[-1.0]]), None, None, 0.0, 1.0, g)
    rep = measure_bound(fl, (np.array([-0.2]), np.array([0.2])), 0.0, 1.0)
    assert rep.bound == pytest.approx(np.e * 0.4, rel=1e-9)
    assert rep.preimage == pytest.approx(rep.bound, abs=2 * 0.002)


@given(st.floats(0.05, 0.5), st.integers(0, 2 ** 31))
def test_trajectories_deterministic_under_workers(dt, seed):
    x0 = np.random.default_rng(seed).uniform(-1, 1, (40, 2))
    rhs = lambda t, x: -x + np.sin(t)
    a = trajectories(rhs, x0, 0.0, [0.0, 0.5, 1.0], dt, workers=1)
    b = trajectories(rhs, x0, 0.0, [0.0, 0.5, 1.0], dt, workers=3)
    assert np.array_equal(a, b)
