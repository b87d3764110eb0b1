"""Uniform Cartesian grids, centered finite-difference stencils and quadrature.

Field layout: component axes first, grid axes last.  A scalar field on an
``n``-dimensional grid has shape ``grid.shape``, a symmetric 2-tensor has
shape ``(n, n) + grid.shape``.

All stencils are second order and one cell wide.  Values on the outermost
layer of the box are not computable and are returned as zero; callers track
validity through :meth:`GridSpec.interior_mask`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

HALO = 2


@dataclass(frozen=True)
class GridSpec:
    """Vertex-centred uniform grid on the box ``[lower, upper]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        if not (len(self.lower) == len(self.upper) == len(self.shape)):
            raise ValueError("lower, upper and shape must have the same length")
        if len(self.shape) < 1:
            raise ValueError("grid dimension must be >= 1")
        if min(self.shape) < 2 * HALO + 1:
            raise ValueError(f"every axis needs at least {2 * HALO + 1} points, got {self.shape}")
        for lo, hi in zip(self.lower, self.upper):
            if not hi > lo:
                raise ValueError(f"empty extent [{lo}, {hi}]")

    @classmethod
    def cube(cls, n: int, half_width: float, points: int, center=None) -> "GridSpec":
        c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
        return cls(tuple(c - half_width), tuple(c + half_width), (points,) * n)

    @property
    def n(self) -> int:
        return len(self.shape)

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (m - 1) for lo, hi, m in zip(self.lower, self.upper, self.shape))

    @property
    def dx(self) -> float:
        """Largest spacing, used wherever a single mesh size is quoted."""
        return max(self.spacing)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        return [lo + h * np.arange(m) for lo, h, m in zip(self.lower, self.spacing, self.shape)]

    @cached_property
    def coords(self) -> np.ndarray:
        """Point coordinates, shape ``(n,) + shape``."""
        return np.array(np.meshgrid(*self.axes(), indexing="ij"))

    def interior_mask(self, width: int = HALO) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[tuple(slice(width, s - width) for s in self.shape)] = True
        return m

    def refined(self, shape) -> "GridSpec":
        return GridSpec(self.lower, self.upper, tuple(shape))

    def scaled(self, factor: float) -> "GridSpec":
        return GridSpec(tuple(factor * v for v in self.lower), tuple(factor * v for v in self.upper), self.shape)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "shape": list(self.shape)}


# ---------------------------------------------------------------------------
# array stencils


def _sl(ndim_lead: int, n: int, axis: int, shift: int, extra=None):
    """Slice tuple selecting interior points shifted by ``shift`` along ``axis``."""
    idx = [slice(None)] * ndim_lead
    for a in range(n):
        off = shift if a == axis else 0
        if extra is not None and a == extra[0]:
            off = extra[1]
        idx.append(slice(1 + off, -1 + off if -1 + off != 0 else None))
    return tuple(idx)


def d1(f: np.ndarray, grid: GridSpec, axis: int) -> np.ndarray:
    """Centered first derivative along ``axis`` (zero on the outer layer)."""
    n = grid.n
    lead = f.ndim - n
    out = np.zeros_like(f)
    out[_sl(lead, n, axis, 0)] = (f[_sl(lead, n, axis, 1)] - f[_sl(lead, n, axis, -1)]) / (2 * grid.spacing[axis])
    return out


def d2(f: np.ndarray, grid: GridSpec, a: int, b: int) -> np.ndarray:
    """Compact second derivative: 3-point for ``a == b``, 4-point cross otherwise."""
    n = grid.n
    lead = f.ndim - n
    out = np.zeros_like(f)
    core = _sl(lead, n, a, 0)
    if a == b:
        out[core] = (f[_sl(lead, n, a, 1)] - 2 * f[core] + f[_sl(lead, n, a, -1)]) / grid.spacing[a] ** 2
    else:
        pp = _sl(lead, n, a, 1, (b, 1))
        pm = _sl(lead, n, a, 1, (b, -1))
        mp = _sl(lead, n, a, -1, (b, 1))
        mm = _sl(lead, n, a, -1, (b, -1))
        out[core] = (f[pp] - f[pm] - f[mp] + f[mm]) / (4 * grid.spacing[a] * grid.spacing[b])
    return out


def gradient(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Partial derivatives stacked on a new leading axis."""
    return np.stack([d1(f, grid, a) for a in range(grid.n)])


def hessian(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    n = grid.n
    out = np.empty((n, n) + f.shape, dtype=f.dtype)
    for a in range(n):
        for b in range(a, n):
            out[a, b] = d2(f, grid, a, b)
            if a != b:
                out[b, a] = out[a, b]
    return out


# ---------------------------------------------------------------------------
# sparse stencils (same discretisation, as matrices on the flattened grid)


def _shift_matrix(shape, offsets) -> sp.csr_matrix:
    """Matrix ``S`` with ``(S f)[p] = f[p + offsets]`` for p on the inner box, 0 elsewhere."""
    size = int(np.prod(shape))
    idx = np.arange(size).reshape(shape)
    inner = tuple(slice(1, s - 1) for s in shape)
    rows = idx[inner].ravel()
    src = tuple(slice(1 + o, s - 1 + o) for s, o in zip(shape, offsets))
    cols = idx[src].ravel()
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(size, size))


def sparse_d1(grid: GridSpec, axis: int) -> sp.csr_matrix:
    e = [0] * grid.n
    e[axis] = 1
    m = [-v for v in e]
    return ((_shift_matrix(grid.shape, e) - _shift_matrix(grid.shape, m)) / (2 * grid.spacing[axis])).tocsr()


def sparse_d2(grid: GridSpec, a: int, b: int) -> sp.csr_matrix:
    n = grid.n
    if a == b:
        e = [0] * n
        e[a] = 1
        m = [-v for v in e]
        z = [0] * n
        s = _shift_matrix(grid.shape, e) - 2 * _shift_matrix(grid.shape, z) + _shift_matrix(grid.shape, m)
        return (s / grid.spacing[a] ** 2).tocsr()
    terms = []
    for sa, sb, sign in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
        o = [0] * n
        o[a], o[b] = sa, sb
        terms.append(sign * _shift_matrix(grid.shape, o))
    return (sum(terms) / (4 * grid.spacing[a] * grid.spacing[b])).tocsr()


# ---------------------------------------------------------------------------
# quadrature and interpolation


def pairwise_sum(values) -> float:
    """Order-fixed pairwise reduction of a flattened array."""
    v = np.ascontiguousarray(np.asarray(values, dtype=float).ravel())
    while v.size > 1:
        if v.size % 2:
            v = np.append(v, 0.0)
        v = v[0::2] + v[1::2]
    return float(v[0]) if v.size else 0.0


def integrate(values: np.ndarray, grid: GridSpec, weight: np.ndarray | float = 1.0) -> float:
    """Point-centred midpoint rule: sum of ``values * weight * cell_volume``."""
    return pairwise_sum(np.asarray(values) * weight) * grid.cell_volume


def interpolate(field: np.ndarray, grid: GridSpec, points: np.ndarray, fill=np.nan) -> np.ndarray:
    """Multilinear interpolation of ``field`` at ``points`` (shape ``(n,) + S``).

    Leading component axes of ``field`` are preserved.  Points outside the box
    receive ``fill``.
    """
    n = grid.n
    lead_shape = field.shape[: field.ndim - n]
    pts = np.asarray(points, dtype=float)
    out_shape = pts.shape[1:]
    pts = pts.reshape(n, -1)
    frac = np.empty_like(pts)
    base = np.empty(pts.shape, dtype=np.int64)
    inside = np.ones(pts.shape[1], dtype=bool)
    for a in range(n):
        t = (pts[a] - grid.lower[a]) / grid.spacing[a]
        inside &= (t >= -1e-12) & (t <= grid.shape[a] - 1 + 1e-12)
        i0 = np.clip(np.floor(t).astype(np.int64), 0, grid.shape[a] - 2)
        base[a] = i0
        frac[a] = np.clip(t - i0, 0.0, 1.0)
    flat = field.reshape(lead_shape + (-1,))
    strides = np.array([int(np.prod(grid.shape[a + 1:])) for a in range(n)])
    result = np.zeros(lead_shape + (pts.shape[1],))
    for corner in range(2**n):
        bits = [(corner >> a) & 1 for a in range(n)]
        w = np.ones(pts.shape[1])
        lin = np.zeros(pts.shape[1], dtype=np.int64)
        for a, bit in enumerate(bits):
            w *= frac[a] if bit else 1.0 - frac[a]
            lin += (base[a] + bit) * strides[a]
        result += flat[..., lin] * w
    result[..., ~inside] = fill
    return result.reshape(lead_shape + out_shape)


def relative_rms(a: np.ndarray, b: np.ndarray) -> float:
    den = math.sqrt(pairwise_sum(b * b))
    return math.sqrt(pairwise_sum((a - b) ** 2)) / den if den > 0 else math.sqrt(pairwise_sum(a * a))
