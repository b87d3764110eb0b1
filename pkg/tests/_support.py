"""Shared fixtures-as-functions for the test modules."""
from __future__ import annotations

import math

import numpy as np

from conegluing.domain_geometry import DomainSpec
from conegluing.gluing_solver import GluingProblem, SolverSettings
from conegluing.grid import GridSpec
from conegluing.interpolation import MetricPair
from conegluing.metrics import ConformalBump, Flat
from conegluing.weights_cutoffs import WeightParams, bump_profile

# box around the part of the default cone shell (pi/6 < theta < pi/3 about e_z)
# that lies in the y = 0 half plane x > 0 with 8 <= r <= 32
SHELL_LOWER = (3.0, -7.0, 4.0)
SHELL_UPPER = (29.0, 7.0, 28.0)
BUMP_CENTER = (12 / math.sqrt(2), 0.0, 12 / math.sqrt(2))


def shell_grid(points: int) -> GridSpec:
    return GridSpec(SHELL_LOWER, SHELL_UPPER, (points,) * 3)


def cone_problem(points: int, amplitude: float = 1e-3, beta: float = -0.5, preconditioner: str = "jacobi",
                 **settings) -> GluingProblem:
    """Flat against a small conformal bump on the default cone shell, truncated to 8 <= r <= 32."""
    grid = shell_grid(points)
    pair = MetricPair.from_generators(Flat(3), ConformalBump(amplitude, BUMP_CENTER, 3.0), grid)
    return GluingProblem(pair, DomainSpec(), WeightParams(beta=beta), r_in=8.0, r_out=32.0,
                         settings=SolverSettings(preconditioner=preconditioner, **settings))


def compact_bump(grid: GridSpec, center, radius: float) -> np.ndarray:
    c = np.asarray(center, dtype=float).reshape((-1,) + (1,) * grid.n)
    rho = np.sqrt(np.sum((grid.coords - c) ** 2, axis=0))
    return bump_profile(rho / radius)


def random_compact_field(grid: GridSpec, rng, margin: int = 4, modes: int = 3) -> np.ndarray:
    """Smooth random field vanishing within ``margin`` cells of the faces."""
    lo = np.asarray(grid.lower) + margin * np.asarray(grid.spacing)
    hi = np.asarray(grid.upper) - margin * np.asarray(grid.spacing)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    pts = grid.coords
    # product bump on the inner box times a few random plane waves
    env = np.ones(grid.shape)
    for a in range(grid.n):
        env *= bump_profile((pts[a] - mid[a]) / half[a])
    wave = np.zeros(grid.shape)
    for _ in range(modes):
        k = rng.normal(size=grid.n) * 2 * math.pi / (hi - lo)
        wave += rng.normal() * np.cos(np.tensordot(k, pts, 1) + rng.uniform(0, 2 * math.pi))
    return env * wave


def random_sym_tensor(grid: GridSpec, rng, margin: int = 4) -> np.ndarray:
    n = grid.n
    h = np.zeros((n, n) + grid.shape)
    for a in range(n):
        for b in range(a, n):
            h[a, b] = random_compact_field(grid, rng, margin)
            h[b, a] = h[a, b]
    return h


def l2_inner(a: np.ndarray, b: np.ndarray, grid: GridSpec, vol=None) -> float:
    lead = tuple(range(a.ndim - grid.n))
    prod = np.sum(a * b, axis=lead) if lead else a * b
    w = 1.0 if vol is None else vol
    return float(np.sum(prod * w)) * grid.cell_volume


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def criterion(number: int, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
