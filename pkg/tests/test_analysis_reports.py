import math
import warnings

import numpy as np
import pytest

from conegluing.analysis_reports import (
    AdmWarning, adm_mass, fit_boundary_decay, fit_decay, format_value, probe_lattice, ray_profile, refinement_study,
    residual_summary, sphere_area, tensor_magnitude, to_csv,
)
from conegluing.domain_geometry import DomainSpec
from conegluing.gluing_solver import solve_gluing
from conegluing.grid import GridSpec
from conegluing.metrics import Flat, Schwarzschild
from conegluing.weights_cutoffs import WeightParams

from _support import cone_problem, shell_grid

SHELL = DomainSpec()
DIAG = np.array([1.0, 1.0, 1.0]) / math.sqrt(3)


def test_sphere_area():
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    assert sphere_area(2) == pytest.approx(2 * math.pi)


def test_power_law_exponent():
    grid = GridSpec.cube(3, 20.0, 41)
    r = np.sqrt(np.sum(grid.coords**2, axis=0))
    field = 1.0 / np.maximum(r, 1e-3) ** 2
    fit = fit_decay(field, grid, DIAG, window=(4.0, 15.0))
    assert fit.exponent == pytest.approx(-2.0, abs=0.01)


def test_exponent_invariant_under_rescaling():
    fits = []
    for lam in (1.0, 2.0):
        grid = GridSpec.cube(3, 20.0 * lam, 41)
        r = np.sqrt(np.sum(grid.coords**2, axis=0))
        # the field u(r / lam) sampled on the scaled grid
        fits.append(fit_decay(3.0 / np.maximum(r / lam, 1e-3) ** 1.5, grid, DIAG, window=(4.0 * lam, 15.0 * lam)))
    assert abs(fits[0].exponent - fits[1].exponent) <= 0.02
    assert fits[1].amplitude / fits[0].amplitude == pytest.approx(2.0**1.5, rel=0.01)


def test_fit_errors():
    grid = GridSpec.cube(3, 5.0, 21)
    with pytest.raises(ValueError):
        ray_profile(np.ones(grid.shape), grid, DIAG, (1.0, 3.0), samples=4)
    with pytest.raises(ValueError):
        fit_decay(np.ones(grid.shape), grid, DIAG, window=(1.0, 50.0))
    with pytest.raises(ValueError):
        fit_decay(np.zeros(grid.shape), grid, DIAG, window=(1.0, 3.0))


def test_tensor_magnitude():
    h = np.zeros((3, 3, 2))
    h[0, 1, 0] = h[1, 0, 0] = 3.0
    h[2, 2, 0] = 4.0
    np.testing.assert_allclose(tensor_magnitude(h, 1), [math.sqrt(34.0), 0.0])


def synthetic_boundary_field(grid, rate=2.0):
    pts = grid.coords
    inside = SHELL.contains(pts)
    x = np.where(inside, SHELL.defining_function(pts, clip=True), 0.0)
    r = SHELL.radius_function(pts)
    val = np.where(inside & (x > 0), np.exp(-rate * r / np.where(x > 0, x, 1.0)), 0.0)
    return val * np.eye(3)[:, :, None, None, None] / math.sqrt(3), x, r


def test_boundary_rate_synthetic():
    grid = shell_grid(48)
    h, _, _ = synthetic_boundary_field(grid)
    fit = fit_boundary_decay(h, SHELL, grid, 16.0)
    assert fit.rate == pytest.approx(2.0, abs=0.1)


def test_boundary_fit_excludes_masked_zeros():
    grid = shell_grid(48)
    h, x, r = synthetic_boundary_field(grid)
    full = fit_boundary_decay(h, SHELL, grid, 16.0)
    h[..., x < 0.07 * r] = 0.0
    part = fit_boundary_decay(h, SHELL, grid, 16.0)
    assert part.samples < full.samples
    assert part.rate == pytest.approx(2.0, abs=0.1)
    with pytest.raises(ValueError, match="unmasked"):
        fit_boundary_decay(np.zeros_like(h), SHELL, grid, 16.0)


def test_adm_flat_zero_every_radius():
    g = Flat(3).sample(GridSpec.cube(3, 30.0, 33))
    for radius in (5.0, 12.0, 25.0):
        assert abs(adm_mass(g, radius).mass) <= 1e-12


def test_adm_schwarzschild_finite_radius_closed_form():
    # for u^4 delta the surface integral at radius r equals m u(r)^3 exactly
    g = Schwarzschild(1.0).sample(GridSpec.cube(3, 30.0, 48))
    for radius in (15.0, 20.0, 25.0):
        assert adm_mass(g, radius).mass == pytest.approx((1 + 1 / (2 * radius)) ** 3, rel=1e-3)


def test_adm_warning_and_range():
    g = Flat(3).sample(GridSpec.cube(3, 30.0, 17))
    with pytest.warns(AdmWarning):
        res = adm_mass(g, 10.0, weights=WeightParams(beta=-0.9))
    assert not res.well_defined
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert adm_mass(g, 10.0, weights=WeightParams(beta=-0.5)).well_defined
    with pytest.raises(ValueError):
        adm_mass(g, 40.0)


def test_csv_formatting():
    assert format_value(0.1) == "0.1"
    assert format_value(1 / 3) == repr(1 / 3)
    assert format_value(float("inf")) == "inf"
    assert format_value((1, 2.5)) == "1 2.5"
    text = to_csv([{"a": 1, "b": 0.25}, {"a": 2, "b": np.float64(1e-20)}])
    assert text == "a,b\n1,0.25\n2,1e-20\n"
    assert to_csv([]) == ""


def test_probe_lattice_inside():
    grid = GridSpec((0, 0, 0), (1, 2, 3), (9, 9, 9))
    p = probe_lattice(grid, 5, margin=0.25)
    assert p.shape == (3, 125)
    assert p.min(axis=1).tolist() == [0.25, 0.25, 0.25]


def test_refinement_order_small():
    s = 1 / math.sqrt(3)
    rows, fit = refinement_study(Schwarzschild(1.0), (4 * s,) * 3, (16 * s,) * 3, (16, 24, 32))
    assert len(rows) == 3
    assert fit["order"] == pytest.approx(2.0, abs=0.3)


def test_flat_generator_curvature_zero():
    rows, fit = refinement_study(Flat(3), (1.0,) * 3, (2.0,) * 3, (8, 12, 16))
    assert math.isnan(fit["order"])
    assert max(r["max_abs_R"] for r in rows) <= 1e-12


def test_residual_localisation():
    sol = solve_gluing(cone_problem(24))
    summ = residual_summary(sol)
    assert summ["unmasked_fraction"] >= 0.99
    assert summ["collar_max_h"] == 0.0
    assert summ["min_eigenvalue"] > 0
