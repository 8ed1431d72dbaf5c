from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from monoflow.monotone_core import (Grid, GridFunction, abv_decompose, abv_norm, envelope, interpolate,
                                    is_decreasing, is_increasing, leq)

from conftest import brute_abv

coords = st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=2)


def test_leq_examples():
    assert leq((0, 0), (1, 1))
    assert not leq((0, 1), (1, 0))
    assert not leq((1, 0), (0, 1))
    assert leq((0.3, -2.0), (0.3, -2.0))
    with pytest.raises(ValueError):
        leq((0, 0), (0, 0, 0))


@given(coords, coords, coords)
def test_leq_is_a_partial_order(x, y, z):
    assert leq(x, x)
    if leq(x, y) and leq(y, x):
        assert np.allclose(x, y)
    if leq(x, y) and leq(y, z):
        assert leq(x, z)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid((0.0,), (0.0,), (3,))
    with pytest.raises(ValueError):
        Grid((0.0,), (0.1,), (1,))
    g = Grid.from_bounds([-1, 0], [1, 1], 0.25)
    assert g.shape == (9, 5)
    assert g.points().shape == (45, 2)
    assert g.upper == pytest.approx((1.0, 1.0))


def test_is_increasing_examples():
    g = Grid.from_bounds([-1, -1], [1, 1], 0.25)
    assert is_increasing(GridFunction.from_callable(g, lambda x: x[:, 0] + x[:, 1]))
    assert not is_increasing(GridFunction.from_callable(g, lambda x: x[:, 0] - x[:, 1]))
    ind = GridFunction.from_callable(g, lambda x: (x[:, 0] + x[:, 1] <= 0).astype(float))
    assert not is_increasing(ind)
    assert is_decreasing(ind)


def test_tag_is_verified():
    g = Grid.from_bounds([0], [1], 0.5)
    with pytest.raises(ValueError):
        GridFunction(g, np.array([1.0, 0.0, 2.0]), tag="increasing")


def test_envelope_on_step():
    g = Grid.from_bounds([-1], [1], 0.25)
    phi = GridFunction.from_callable(g, lambda x: (x[:, 0] <= 0).astype(float))
    up = envelope(phi, "upper").values
    i0 = g.index_of([0.0])[0]
    assert up[i0] == 1.0 and up[i0 + 1] == 1.0 and up[i0 + 2] == 0.0
    lo = envelope(phi, "lower").values
    assert lo[i0] == 0.0 and lo[i0 - 1] == 1.0


def test_envelope_constant_unchanged():
    g = Grid.from_bounds([0, 0], [1, 1], 0.25)
    phi = GridFunction(g, np.full(g.shape, 3.5))
    assert np.array_equal(envelope(phi, "upper").values, phi.values)
    assert np.array_equal(envelope(phi, "lower").values, phi.values)


@given(arrays(float, (5, 4), elements=st.floats(-5, 5)))
def test_envelope_brackets_input(vals):
    phi = GridFunction(Grid((0, 0), (1, 1), (5, 4)), vals)
    assert np.all(envelope(phi, "lower").values <= vals)
    assert np.all(vals <= envelope(phi, "upper").values)


def test_abv_examples_against_enumeration():
    g = Grid.from_bounds([0, 0], [1, 1], 0.25)
    phi = GridFunction.from_callable(g, lambda x: x[:, 0] - x[:, 1])
    assert abv_norm(phi, ((0, 0), (1, 1))) == pytest.approx(2.0, abs=1e-14)
    assert brute_abv(phi.values) == pytest.approx(2.0, abs=1e-14)
    g2 = Grid.from_bounds([-1, -1], [1, 1], 0.5)
    ind = GridFunction.from_callable(g2, lambda x: (x[:, 0] + x[:, 1] <= 0).astype(float))
    assert abv_norm(ind, ((-1, -1), (1, 1))) == 1.0
    assert brute_abv(ind.values) == 1.0


def test_abv_box_errors():
    g = Grid.from_bounds([0, 0], [1, 1], 0.5)
    phi = GridFunction(g, np.zeros(g.shape))
    with pytest.raises(ValueError):
        abv_norm(phi, ((0, 0), (2, 2)))
    with pytest.raises(ValueError):
        abv_norm(phi, ((1, 1), (0, 0)))


@given(st.integers(2, 4), st.integers(2, 4), st.integers(0, 2 ** 31))
def test_abv_dp_matches_enumeration(n1, n2, seed):
    vals = np.random.default_rng(seed).normal(size=(n1, n2))
    phi = GridFunction(Grid((0, 0), (1, 1), (n1, n2)), vals)
    assert abv_norm(phi, ((0, 0), (n1 - 1, n2 - 1))) == pytest.approx(brute_abv(vals), abs=1e-12)


@given(st.integers(0, 2 ** 31))
def test_abv_of_increasing_is_total_rise(seed):
    r = np.random.default_rng(seed)
    vals = np.cumsum(np.cumsum(r.uniform(0, 1, (6, 7)), axis=0), axis=1)
    phi = GridFunction(Grid((0, 0), (0.5, 0.5), (6, 7)), vals, tag="increasing")
    norm = abv_norm(phi, ((0, 0), (2.5, 3.0)))
    assert norm == pytest.approx(vals[-1, -1] - vals[0, 0], rel=1e-12)


@given(st.integers(0, 2 ** 31))
def test_abv_decomposition_reconstructs(seed):
    vals = np.random.default_rng(seed).normal(size=(5, 6))
    phi = GridFunction(Grid((0, 0), (1, 1), (5, 6)), vals)
    rep = abv_decompose(phi, ((0, 0), (4, 5)))
    assert is_increasing(rep.phi_plus, atol=1e-12)
    assert is_increasing(rep.phi_minus, atol=1e-12)
    assert np.allclose(rep.phi_plus.values - rep.phi_minus.values, vals, atol=1e-12)
    assert rep.norm == pytest.approx(brute_abv(vals), abs=1e-12)


def test_abv_decompose_special_cases():
    g = Grid.from_bounds([0, 0], [1, 1], 0.25)
    psi = GridFunction.from_callable(g, lambda x: x[:, 0] + 2 * x[:, 1])
    rep = abv_decompose(psi, ((0, 0), (1, 1)))
    assert np.allclose(np.diff(rep.phi_minus.values, axis=0), 0.0)
    neg = psi.with_values(-psi.values)
    rep = abv_decompose(neg, ((0, 0), (1, 1)))
    assert np.allclose(np.diff(rep.phi_plus.values, axis=1), 0.0)
    assert np.allclose(rep.phi_plus.values - rep.phi_minus.values, neg.values)
    const = psi.with_values(np.full(g.shape, 2.0))
    rep = abv_decompose(const, ((0, 0), (1, 1)))
    assert rep.norm == 0.0 and np.allclose(rep.phi_plus.values - rep.phi_minus.values, 2.0)


def test_interpolate_exact_on_linear_and_clamped():
    g = Grid.from_bounds([0, 0], [1, 1], 0.1)
    vals = (2 * g.points()[:, 0] - g.points()[:, 1]).reshape(g.shape)
    x = np.array([[0.33, 0.71], [0.05, 0.95], [2.0, -1.0]])
    out = interpolate(g, vals, x)
    assert np.allclose(out[:2], 2 * x[:2, 0] - x[:2, 1])
    assert out[2] == pytest.approx(2.0)
