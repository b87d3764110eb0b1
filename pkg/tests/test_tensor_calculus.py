import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conegluing.errors import NumericalError
from conegluing.grid import GridSpec, d2
from conegluing.metrics import ConformalBump, Flat, Schwarzschild
from conegluing.tensor_calculus import (
    Geometry, MetricField, adjoint_linearized, christoffel, linearized_scalar, ricci, scalar_curvature,
)

from _support import compact_bump, random_sym_tensor

EYE = np.eye(3)[:, :, None, None, None]


def conformal(grid, factor):
    return MetricField(grid, factor * EYE * np.ones(grid.shape))


def test_flat_is_flat():
    g = Flat(3).sample(GridSpec.cube(3, 1.0, 9))
    assert np.all(christoffel(g) == 0)
    assert np.all(scalar_curvature(g) == 0)


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(-0.4, 0.4), min_size=6, max_size=6))
def test_constant_metric_has_no_curvature(entries):
    # any constant positive-definite matrix
    a = np.eye(3) + np.array([[entries[0], entries[1], entries[2]],
                              [0, entries[3], entries[4]],
                              [0, 0, entries[5]]])
    m = a @ a.T + 0.1 * np.eye(3)
    grid = GridSpec.cube(3, 1.0, 7)
    g = MetricField(grid, np.broadcast_to(m[:, :, None, None, None], (3, 3) + grid.shape).copy())
    geo = Geometry(g)
    inner = grid.interior_mask(1)
    assert np.abs(geo.christoffel[..., inner]).max() < 1e-12
    assert np.abs(geo.scalar[inner]).max() < 1e-12


def test_scaled_flat_christoffel_zero():
    grid = GridSpec.cube(3, 1.0, 9)
    assert np.abs(christoffel(conformal(grid, 2.5))).max() < 1e-14


def test_conformal_christoffel_closed_form():
    errs = []
    for pts in (17, 33):
        grid = GridSpec.cube(3, 1.0, pts)
        x, y, _ = grid.coords
        df = (0.3, 0.2, 0.0)
        gam = christoffel(conformal(grid, np.exp(2 * (0.3 * x + 0.2 * y))))
        inner = grid.interior_mask(1)
        err = 0.0
        for k in range(3):
            for i in range(3):
                for j in range(3):
                    exact = (k == i) * df[j] + (k == j) * df[i] - (i == j) * df[k]
                    err = max(err, np.abs(gam[k, i, j][inner] - exact).max())
        errs.append(err)
    assert errs[1] < 1e-4
    # second order: halving the spacing divides the error by about four
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_gaussian_conformal_scalar_curvature():
    rel = []
    for pts in (24, 48):
        grid = GridSpec.cube(3, 3.0, pts)
        rho2 = np.sum(grid.coords**2, axis=0)
        u = 1 + 0.1 * np.exp(-rho2)
        exact = -8 * u**-5 * 0.1 * np.exp(-rho2) * (4 * rho2 - 6)
        R = scalar_curvature(conformal(grid, u**4))
        inner = grid.interior_mask(1)
        rel.append(np.abs(R - exact)[inner].max() / np.abs(exact).max())
    assert rel[1] < 0.02
    assert rel[0] / rel[1] == pytest.approx(4.0, rel=0.15)


def test_schwarzschild_small_curvature():
    s = 1 / math.sqrt(3)
    grid = GridSpec((4 * s,) * 3, (16 * s,) * 3, (32,) * 3)
    R = scalar_curvature(Schwarzschild(1.0).sample(grid))
    assert np.abs(R[grid.interior_mask()]).max() < 1e-2


def test_outputs_exactly_symmetric(rng):
    grid = GridSpec.cube(3, 3.0, 16)
    g = ConformalBump(0.05, (0, 0, 0), 2.0).sample(grid)
    ric = ricci(g)
    assert np.array_equal(ric, np.swapaxes(ric, 0, 1))
    f = compact_bump(grid, (0.3, 0, 0), 1.5)
    ps = adjoint_linearized(g, f)
    assert np.array_equal(ps, np.swapaxes(ps, 0, 1))


def test_singular_metric_rejected():
    grid = GridSpec.cube(3, 1.0, 9)
    comp = np.array(EYE * np.ones(grid.shape))
    comp[0, 0, 4, 4, 4] = -1.0
    with pytest.raises(NumericalError) as exc:
        Geometry(MetricField(grid, comp))
    assert exc.value.location["index"] == (4, 4, 4)


def test_linearized_zero_and_halo():
    grid = GridSpec.cube(3, 2.0, 12)
    g = Flat(3).sample(grid)
    assert np.all(linearized_scalar(g, np.zeros((3, 3) + grid.shape)) == 0)
    h = np.zeros((3, 3) + grid.shape)
    h[0, 0, 0, 5, 5] = 1.0
    with pytest.raises(ValueError, match="halo"):
        linearized_scalar(g, h)


def test_flat_trace_perturbation():
    # P_delta(f delta) = (1 - n) Lap f
    grid = GridSpec.cube(3, 3.0, 32)
    f = compact_bump(grid, (0.2, -0.1, 0.0), 2.0)
    h = f * EYE
    P = linearized_scalar(Flat(3).sample(grid), h)
    lap = sum(d2(f, grid, a, a) for a in range(3))
    inner = grid.interior_mask(1)
    np.testing.assert_allclose(P[inner], -2 * lap[inner], atol=1e-9 * np.abs(lap).max())


def test_flat_adjoint_closed_forms():
    grid = GridSpec.cube(3, 2.0, 12)
    g = Flat(3).sample(grid)
    inner = grid.interior_mask(1)
    assert np.abs(adjoint_linearized(g, np.full(grid.shape, 3.0))).max() == 0
    ps = adjoint_linearized(g, np.sum(grid.coords**2, axis=0))
    np.testing.assert_allclose(ps[..., inner], (2 * (1 - 3) * EYE * np.ones(grid.shape))[..., inner], atol=1e-11)


def test_linearization_centred_difference(rng):
    grid = GridSpec.cube(3, 3.0, 24)
    g = ConformalBump(0.05, (0, 0, 0), 2.0).sample(grid)
    h = random_sym_tensor(grid, rng)
    P = linearized_scalar(g, h)
    inner = grid.interior_mask(1)
    errs = []
    for eps in (1e-2, 1e-3):
        diff = (scalar_curvature(g + eps * h) - scalar_curvature(g + (-eps) * h)) / (2 * eps)
        errs.append(math.sqrt(np.sum((diff - P)[inner] ** 2)))
    assert errs[0] / errs[1] == pytest.approx(100, rel=0.1)
