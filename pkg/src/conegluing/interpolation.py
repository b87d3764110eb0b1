"""Cutoff interpolation of two metrics, the interpolated scalar curvature and its
defect, and the translation / scaling maps that make two asymptotically
Euclidean metrics close on a scale-invariant domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec, d1, interpolate
from .metrics import AnalyticMetric
from .tensor_calculus import Geometry, MetricField


@dataclass
class MetricPair:
    """Two metrics on a common grid.  ``sources`` keeps the analytic generators, if
    any, so that translations and scalings can resample exactly."""

    g: MetricField
    ghat: MetricField
    sources: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.g.grid != self.ghat.grid:
            raise ValueError("metrics of a pair must share one grid")

    @classmethod
    def from_generators(cls, g: AnalyticMetric, ghat: AnalyticMetric, grid: GridSpec) -> "MetricPair":
        return cls(g.sample(grid), ghat.sample(grid), (g, ghat))

    @property
    def grid(self) -> GridSpec:
        return self.g.grid

    @property
    def identical(self) -> bool:
        return np.array_equal(self.g.components, self.ghat.components)

    def closeness(self, beta_tilde: float = -1.0, mask=None, radius=None) -> dict:
        """Sup norms of ``ghat - g`` and of its first derivatives weighted by ``r^-beta_tilde``
        (derivatives carry one extra power of ``r``)."""
        grid = self.grid
        diff = self.ghat.components - self.g.components
        r = np.sqrt(np.sum(grid.coords**2, axis=0)) if radius is None else radius
        r = np.maximum(r, 1.0)
        sel = grid.interior_mask(1) if mask is None else np.asarray(mask) & grid.interior_mask(1)
        wt = r ** (-beta_tilde)
        c0 = np.max(np.abs(diff), axis=(0, 1)) * wt
        c1 = np.zeros(grid.shape)
        for a in range(grid.n):
            c1 = np.maximum(c1, np.max(np.abs(d1(diff, grid, a)), axis=(0, 1)) * wt * r)
        if not sel.any():
            return {"sup": 0.0, "sup_d1": 0.0, "weighted": 0.0, "beta_tilde": beta_tilde}
        s0, s1 = float(c0[sel].max()), float(c1[sel].max())
        return {"sup": s0, "sup_d1": s1, "weighted": max(s0, s1), "beta_tilde": beta_tilde}


def interpolate_metrics(pair: MetricPair, chi: np.ndarray) -> MetricField:
    """``g_chi = chi ghat + (1 - chi) g``."""
    chi = np.asarray(chi, dtype=float)
    if chi.shape != pair.grid.shape:
        raise ValueError(f"cutoff has shape {chi.shape}, grid has {pair.grid.shape}")
    if chi.min() < 0 or chi.max() > 1:
        raise ValueError("cutoff values must lie in [0, 1]")
    if pair.identical:
        # exact, not merely up to rounding
        return pair.g
    comp = chi * pair.ghat.components + (1.0 - chi) * pair.g.components
    return MetricField(pair.grid, 0.5 * (comp + np.swapaxes(comp, 0, 1)))


def target_scalar(pair: MetricPair, chi: np.ndarray, geometries=None) -> np.ndarray:
    """``R_chi = chi R(ghat) + (1 - chi) R(g)``."""
    geo_g, geo_h = geometries or (Geometry(pair.g), None if pair.identical else Geometry(pair.ghat))
    if pair.identical:
        return geo_g.scalar
    return chi * geo_h.scalar + (1.0 - chi) * geo_g.scalar


def defect(pair: MetricPair, chi: np.ndarray, geometries=None) -> np.ndarray:
    """``delta R_chi = R_chi - R(g_chi)``."""
    return target_scalar(pair, chi, geometries) - Geometry(interpolate_metrics(pair, chi)).scalar


def _require_sources(pair: MetricPair):
    if pair.sources is None:
        raise ValueError("translation and scaling need analytic metric generators; grid data has finite extent")
    return pair.sources


def translate_problem(pair: MetricPair, y) -> MetricPair:
    """Pull both metrics back by ``p -> p + y`` and resample on the same grid."""
    y = np.asarray(y, dtype=float)
    if y.shape != (pair.grid.n,):
        raise ValueError(f"translation must have {pair.grid.n} components")
    if not np.any(y):
        return pair
    g, gh = _require_sources(pair)
    return MetricPair.from_generators(g.translated(y), gh.translated(y), pair.grid)


def scale_problem(pair: MetricPair, lam: float) -> MetricPair:
    """``g_lam = lam^-2 psi_lam^* g`` (components ``g(lam p)``) for both metrics."""
    if not lam >= 1:
        raise ValueError(f"scaling factor must be >= 1, got {lam}")
    if lam == 1:
        return pair
    g, gh = _require_sources(pair)
    return MetricPair.from_generators(g.scaled(lam), gh.scaled(lam), pair.grid)


def resample_metric(g: MetricField, points: np.ndarray, grid: GridSpec) -> MetricField:
    """Components of ``g`` at ``points`` (one per node of ``grid``), coordinate metric where undefined."""
    vals = interpolate(g.components, g.grid, points)
    n = grid.n
    eye = np.broadcast_to(np.eye(n).reshape((n, n) + (1,) * n), vals.shape)
    vals = np.where(np.isfinite(vals), vals, eye)
    return MetricField(grid, 0.5 * (vals + np.swapaxes(vals, 0, 1)))


def unscale_metric(g: MetricField, lam: float, grid: GridSpec | None = None) -> MetricField:
    """Inverse of the scaling: components ``g(p / lam)`` sampled on ``grid``.

    Points whose preimage leaves the source grid keep the coordinate metric.
    """
    if not lam > 0:
        raise ValueError("scaling factor must be positive")
    grid = grid or g.grid
    return resample_metric(g, grid.coords / lam, grid)


def untranslate_metric(g: MetricField, y, grid: GridSpec | None = None) -> MetricField:
    """Inverse of the translation: components ``g(p - y)``."""
    grid = grid or g.grid
    y = np.asarray(y, dtype=float).reshape((-1,) + (1,) * grid.n)
    return resample_metric(g, grid.coords - y, grid)


def scale_back(problem_pair: MetricPair, lam: float) -> MetricPair:
    """Scale an already scaled pair back (analytic resampling, exact)."""
    g, gh = _require_sources(problem_pair)
    return MetricPair.from_generators(g.scaled(1.0 / lam), gh.scaled(1.0 / lam), problem_pair.grid)


def sup_deviation(m: MetricField, mask=None) -> float:
    """``sup |g - delta|`` over ``mask``."""
    n = m.n
    dev = np.max(np.abs(m.components - np.eye(n).reshape((n, n) + (1,) * n)), axis=(0, 1))
    return float(dev[mask].max() if mask is not None else dev.max())


def doubling_schedule(start: float, cap: float):
    """``start, 2 start, 4 start, ...`` up to ``cap`` (the automatic preconditioning ladder)."""
    v = start
    while v <= cap * (1 + 1e-12):
        yield v
        v *= 2.0
    if not math.isclose(v / 2, cap) and v / 2 < cap:
        yield cap
