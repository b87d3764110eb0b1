import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conegluing.grid import (
    GridSpec, d1, d2, integrate, interpolate, pairwise_sum, sparse_d1, sparse_d2,
)


def quadratic(grid):
    x, y, z = grid.coords
    return 1 + 2 * x - y + 0.5 * x * x + 3 * x * y - z * z


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec((0, 0), (1, 1, 1), (8, 8, 8))
    with pytest.raises(ValueError):
        GridSpec((0, 0, 0), (1, 1, 1), (4, 8, 8))
    with pytest.raises(ValueError):
        GridSpec((0, 0, 0), (0, 1, 1), (8, 8, 8))


def test_cube_and_spacing():
    g = GridSpec.cube(3, 2.0, 9)
    assert g.spacing == (0.5, 0.5, 0.5)
    assert g.coords.shape == (3, 9, 9, 9)
    assert g.interior_mask().sum() == 5**3


def test_stencils_exact_on_quadratics():
    g = GridSpec((0, -1, 2), (2, 1, 3), (9, 11, 7))
    f = quadratic(g)
    x, y, z = g.coords
    m = g.interior_mask(1)
    np.testing.assert_allclose(d1(f, g, 0)[m], (2 + x + 3 * y)[m], atol=1e-12)
    np.testing.assert_allclose(d2(f, g, 0, 1)[m], 3.0, atol=1e-11)
    np.testing.assert_allclose(d2(f, g, 2, 2)[m], -2.0, atol=1e-10)
    assert np.all(d1(f, g, 0)[~m] == 0)


def test_sparse_matches_dense():
    g = GridSpec((0, 0, 0), (1, 2, 1), (7, 8, 9))
    f = np.sin(g.coords[0] * 3) * np.cos(g.coords[1])
    for a in range(3):
        np.testing.assert_allclose((sparse_d1(g, a) @ f.ravel()).reshape(g.shape), d1(f, g, a), atol=1e-13)
        for b in range(a, 3):
            np.testing.assert_allclose((sparse_d2(g, a, b) @ f.ravel()).reshape(g.shape), d2(f, g, a, b), atol=1e-11)


def test_integrate_constant():
    g = GridSpec.cube(3, 1.0, 11)
    assert integrate(np.ones(g.shape), g) == pytest.approx(11**3 * 0.2**3)


def test_interpolate_multilinear_exact():
    g = GridSpec((0, 0, 0), (1, 2, 3), (6, 7, 8))
    x, y, z = g.coords
    f = 1 + x - 2 * y + 0.5 * z
    pts = np.array([[0.13, 0.7, 0.99], [1.1, 0.0, 1.9], [2.5, 3.0, 0.1]])
    np.testing.assert_allclose(interpolate(f, g, pts), 1 + pts[0] - 2 * pts[1] + 0.5 * pts[2], atol=1e-13)
    assert np.isnan(interpolate(f, g, np.array([[2.0], [0.5], [0.5]]))[0])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200))
def test_pairwise_sum_order_fixed(vals):
    a = np.array(vals)
    assert pairwise_sum(a) == pairwise_sum(a.copy())
    assert pairwise_sum(a) == pytest.approx(float(np.sum(a)), abs=1e-6 * (1 + np.abs(a).sum()))
