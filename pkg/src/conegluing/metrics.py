"""Analytic metric generators.

Generators can be evaluated at arbitrary points, so translations, scalings and
pull-backs are resampled exactly instead of interpolated.
"""
from __future__ import annotations

import numpy as np

from .grid import GridSpec
from .tensor_calculus import MetricField
from .weights_cutoffs import bump_profile


class AnalyticMetric:
    """Base class: subclasses implement :meth:`components`."""

    name = "metric"

    def components(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, grid: GridSpec) -> MetricField:
        c = self.components(grid.coords)
        return MetricField(grid, 0.5 * (c + np.swapaxes(c, 0, 1)))

    def translated(self, y) -> "AnalyticMetric":
        return Translated(self, np.asarray(y, dtype=float))

    def scaled(self, lam: float) -> "AnalyticMetric":
        return Scaled(self, float(lam))

    def pulled_back(self, diffeo) -> "AnalyticMetric":
        return PulledBack(self, diffeo)

    def describe(self) -> dict:
        return {"name": self.name}


def _identity(n, shape):
    eye = np.eye(n).reshape((n, n) + (1,) * len(shape))
    return np.broadcast_to(eye, (n, n) + tuple(shape))


class Flat(AnalyticMetric):
    name = "flat"

    def __init__(self, n: int = 3):
        self.n = n

    def components(self, points):
        return _identity(points.shape[0], points.shape[1:]).copy()

    def describe(self):
        return {"name": self.name}


class ConformallyFlat(AnalyticMetric):
    """``u^{4/(n-2)} delta`` for a conformal factor ``u``."""

    def conformal_factor(self, points) -> np.ndarray:
        raise NotImplementedError

    def components(self, points):
        n = points.shape[0]
        u = self.conformal_factor(points)
        return u ** (4.0 / (n - 2)) * _identity(n, points.shape[1:])


class Schwarzschild(ConformallyFlat):
    """Isotropic Riemannian Schwarzschild slice, ``u = 1 + m / (2 |p - c|^{n-2})``."""

    name = "schwarzschild"

    def __init__(self, mass: float = 1.0, center=None):
        self.mass = float(mass)
        self.center = None if center is None else np.asarray(center, dtype=float)

    def conformal_factor(self, points):
        n = points.shape[0]
        c = np.zeros(n) if self.center is None else self.center
        rad = np.sqrt(np.sum((points - c.reshape((n,) + (1,) * (points.ndim - 1))) ** 2, axis=0))
        return 1.0 + self.mass / (2.0 * rad ** (n - 2))

    def describe(self):
        return {"name": self.name, "mass": self.mass, "center": None if self.center is None else self.center.tolist()}


class ConformalBump(ConformallyFlat):
    """``u = 1 + A * eta(|p - c| / w)`` with the compactly supported C-infinity bump ``eta``."""

    name = "bump"

    def __init__(self, amplitude: float, center, width: float):
        self.amplitude = float(amplitude)
        self.center = np.asarray(center, dtype=float)
        self.width = float(width)

    def conformal_factor(self, points):
        n = points.shape[0]
        rad = np.sqrt(np.sum((points - self.center.reshape((n,) + (1,) * (points.ndim - 1))) ** 2, axis=0))
        return 1.0 + self.amplitude * bump_profile(rad / self.width)

    def describe(self):
        return {"name": self.name, "amplitude": self.amplitude, "center": self.center.tolist(), "width": self.width}


class ConformalGaussian(ConformallyFlat):
    """``u = 1 + A exp(-|p - c|^2 / w^2)``."""

    name = "gaussian"

    def __init__(self, amplitude: float, center, width: float = 1.0):
        self.amplitude = float(amplitude)
        self.center = np.asarray(center, dtype=float)
        self.width = float(width)

    def conformal_factor(self, points):
        n = points.shape[0]
        r2 = np.sum((points - self.center.reshape((n,) + (1,) * (points.ndim - 1))) ** 2, axis=0)
        return 1.0 + self.amplitude * np.exp(-r2 / self.width**2)

    def describe(self):
        return {"name": self.name, "amplitude": self.amplitude, "center": self.center.tolist(), "width": self.width}


class Translated(AnalyticMetric):
    """Pull-back by ``p -> p + y``."""

    def __init__(self, base: AnalyticMetric, y: np.ndarray):
        self.base, self.y = base, y
        self.name = base.name

    def components(self, points):
        return self.base.components(points + self.y.reshape((-1,) + (1,) * (points.ndim - 1)))

    def describe(self):
        return {**self.base.describe(), "translation": self.y.tolist()}


class Scaled(AnalyticMetric):
    """``lam^-2`` times the pull-back by ``p -> lam p``; components are ``g(lam p)``."""

    def __init__(self, base: AnalyticMetric, lam: float):
        self.base, self.lam = base, lam
        self.name = base.name

    def components(self, points):
        return self.base.components(self.lam * points)

    def describe(self):
        return {**self.base.describe(), "scale": self.lam}


class PulledBack(AnalyticMetric):
    """``(Psi^* g)_ij = d_i Psi^a d_j Psi^b g_ab(Psi(p))`` with analytic Jacobian."""

    def __init__(self, base: AnalyticMetric, diffeo):
        self.base, self.diffeo = base, diffeo
        self.name = base.name

    def components(self, points):
        image = self.diffeo.apply(points)
        jac = self.diffeo.jacobian(points)  # jac[a, i] = d_i Psi^a
        gb = self.base.components(image)
        return np.einsum("ai...,ab...,bj...->ij...", jac, gb, jac)

    def describe(self):
        return {**self.base.describe(), "pullback": self.diffeo.describe()}


GENERATORS = {
    "flat": lambda n=3, **kw: Flat(n),
    "schwarzschild": lambda n=3, **kw: Schwarzschild(**kw),
    "bump": lambda n=3, **kw: ConformalBump(**kw),
    "gaussian": lambda n=3, **kw: ConformalGaussian(**kw),
}


def make_metric(name: str, n: int = 3, **params) -> AnalyticMetric:
    try:
        factory = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown metric generator {name!r}; choose from {sorted(GENERATORS)}") from None
    return factory(n=n, **params)
