from __future__ import annotations

import numpy as np
import pytest
from scipy.special import ndtr

from monoflow.fields import VelocityField, sign_field, zero_field
from monoflow.flow_engine import integrate_regularized_flow
from monoflow.monotone_core import Grid
from monoflow.stochastic import (NoiseSpec, brownian_increments, coupled_order_check, em_flow,
                                 heat_step_reference, solve_fokker_planck, solve_second_order_te)
from monoflow.transport import TransportProblem, solve_transport


def step(x):
    return (np.asarray(x)[..., 0] <= 0).astype(float)


def test_noise_shapes_and_structure():
    n = NoiseSpec.additive(2, 0.3)
    m = n.matrix(0.0, np.zeros((5, 7, 2)))
    assert m.shape == (5, 7, 2, 2)
    assert np.allclose(m[0, 0], 0.3 * np.eye(2))
    assert NoiseSpec.zero(1).dim == 1


def test_brownian_increments_reproducible():
    a = brownian_increments(3, 17, (1000, 2), 0.01)
    b = brownian_increments(3, 17, (1000, 2), 0.01)
    c = brownian_increments(3, 18, (1000, 2), 0.01)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    big = brownian_increments(1, 0, (200_000,), 0.25)
    assert abs(big.mean()) < 3 * 0.5 / np.sqrt(200_000)
    assert big.var() == pytest.approx(0.25, rel=0.01)


def test_zero_noise_matches_deterministic_flow():
    g = Grid.from_bounds([-1], [1], 0.05)
    b = sign_field()
    fg = Grid.from_bounds([-3], [3], 0.01)
    bundle = em_flow(b, NoiseSpec.zero(1), "upper", 0.1, 0.0, 0.5, 0.001, 3, 0, grid=g, field_grid=fg)
    det = integrate_regularized_flow(b, "upper", 0.1, 0.0, 0.5, g, dt=0.025, field_grid=fg)
    assert np.allclose(bundle.at(0.5)[0], det.at(0.5), atol=0.01)


def test_brownian_statistics():
    eps = 0.05
    pts = np.array([[0.3]])
    bundle = em_flow(zero_field(1), NoiseSpec.additive(1, np.sqrt(2 * eps)), None, None, 0.0, 1.0, 0.05,
                     20_000, 9, points=pts)
    x = bundle.at(1.0)[:, 0, 0]
    se = np.sqrt(2 * eps / 20_000)
    assert abs(x.mean() - 0.3) <= 3 * se
    assert x.var() == pytest.approx(2 * eps, rel=3 * np.sqrt(2 / 20_000))


def test_coupled_ordering():
    g = Grid.from_bounds([-1], [1], 0.1)
    noise = NoiseSpec.additive(1, 0.5)
    kw = dict(s=0.0, t_end=0.5, dt=0.05, n_paths=500, seed=2)
    lo = em_flow(sign_field(), noise, "lower", 0.2, grid=g, **kw)
    hi = em_flow(sign_field(), noise, "upper", 0.2, grid=g, **kw)
    assert coupled_order_check(lo, hi) == 0.0
    assert coupled_order_check(lo, lo) == 0.0
    pts = g.points()
    a = em_flow(sign_field(), noise, "upper", 0.2, points=pts, **kw)
    b = em_flow(sign_field(), noise, "upper", 0.2, points=pts + 0.05, **kw)
    assert coupled_order_check(a, b) == 0.0
    other = em_flow(sign_field(), noise, "upper", 0.2, 0.0, 0.5, 0.05, 500, 3, grid=g)
    with pytest.raises(ValueError):
        coupled_order_check(lo, other)


def test_step_size_and_oscillation_guards():
    g = Grid.from_bounds([-1], [1], 0.1)
    with pytest.raises(ValueError):
        em_flow(sign_field(), NoiseSpec.additive(1, 0.1), "upper", 0.2, 0.0, 0.5, 0.5, 10, 0, grid=g)
    wild = VelocityField(lambda t, x: x, 1, C0=1.0, C1=0.0, C2=0.1, name="steep")
    with pytest.raises(ValueError):
        em_flow(wild, NoiseSpec.additive(1, 0.1), None, None, 0.0, 0.5, 0.01, 10, 0, grid=g)


def test_heat_reference():
    assert heat_step_reference(0.0, 1.0, 0.5) == pytest.approx(0.5)
    assert np.array_equal(heat_step_reference(np.array([-1.0, 1.0]), 0.0, 1.0), [1.0, 0.0])
    assert heat_step_reference(0.2, 0.5, 0.1) == pytest.approx(ndtr(-0.2 / np.sqrt(0.1)))


def test_second_order_gaussian_cdf():
    g = Grid.from_bounds([-1], [1], 0.1)
    eps = 0.05
    sol = solve_second_order_te(zero_field(1), NoiseSpec.additive(1, np.sqrt(2 * eps)), step, g, [0.0, 0.5],
                                T=1.0, n_paths=20_000, seed=5, dt=0.1)
    x = g.axis(0)
    for k, t in enumerate(sol.times):
        exact = heat_step_reference(x, 1.0 - t, eps)
        # where every path agrees the sample error is 0; use the exact binomial error there
        se = np.maximum(sol.info["stderr"][k], np.sqrt(exact * (1 - exact) / 20_000))
        se = np.maximum(se, 1.0 / 20_000)
        assert np.max(np.abs(sol.values[k] - exact) / se) <= 4.0
    assert sol.slices_decreasing(atol=1e-12)


def test_second_order_zero_noise_is_transport():
    g = Grid.from_bounds([-1.5], [1.5], 0.05)
    b = sign_field()
    datum = lambda x: -np.tanh(3 * x[:, 0])
    mc = solve_second_order_te(b, NoiseSpec.zero(1), datum, g, [0.0], T=0.5, n_paths=2, seed=0, dt=0.0125)
    ref = solve_transport(TransportProblem(b, datum, T=0.5), g, [0.0])
    assert np.max(np.abs(mc.values[0] - ref.values[0])) <= 0.1


def test_second_order_overflow_guard():
    g = Grid.from_bounds([-1], [1], 0.5)
    with pytest.raises(ValueError), np.errstate(over="ignore"):
        solve_second_order_te(zero_field(1), NoiseSpec.additive(1, 30.0), lambda x: np.exp(np.exp(x[:, 0])), g,
                              [0.0], T=1.0, n_paths=200, seed=0, dt=0.1)


def test_fokker_planck_spreading_and_mass():
    g = Grid.from_bounds([-4], [4], 0.02)
    narrow = lambda x: (np.abs(np.asarray(x)[..., 0]) <= 0.05) / 0.1
    dens = solve_fokker_planck(zero_field(1), NoiseSpec.additive(1, np.sqrt(2.0)), narrow, g, [0.0, 0.5],
                               n_particles=20_000, seed=3, dt=0.05, sample_box=([-0.05], [0.05]))
    x = dens.positions[1][:, 0]
    w = dens.weights / dens.weights.sum()
    var = np.sum(w * x ** 2) - np.sum(w * x) ** 2
    assert var == pytest.approx(2 * 0.5 + 0.1 ** 2 / 12, rel=0.05)
    assert dens.mass(0.5) == pytest.approx(1.0, abs=1e-3)
