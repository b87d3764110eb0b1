"""Grid-based Riemannian geometry: Christoffel symbols, Ricci and scalar curvature,
the linearised scalar-curvature operator ``P`` and its formal adjoint ``P*``.

Second derivatives of the metric use compact stencils (3-point on the diagonal,
4-point cross terms) so that the fourth-order operator ``P(W P* .)`` built on
top of them has no odd-even decoupled null modes.  The scalar curvature is a
pointwise function ``F(g, dg, ddg)`` of the sampled metric and its stencil
derivatives; ``P`` is the exact derivative of that discrete map, with the
coefficients of ``g`` and ``dg`` obtained by complex-step differentiation and
those of ``ddg`` in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError
from .grid import GridSpec, d1, d2, sparse_d1, sparse_d2

MAX_CONDITION = 1e12
_CHUNK = 8192
_STEP = 1e-30


def sym_pairs(n: int) -> list[tuple[int, int]]:
    return list(combinations_with_replacement(range(n), 2))


@dataclass(frozen=True)
class MetricField:
    """Symmetric 2-tensor field on a grid, used for every metric in the package."""

    grid: GridSpec
    components: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        n = self.grid.n
        if c.shape != (n, n) + self.grid.shape:
            raise ValueError(f"metric components must have shape {(n, n) + self.grid.shape}, got {c.shape}")
        if not np.array_equal(c, np.swapaxes(c, 0, 1)):
            raise ValueError("metric components are not symmetric")
        object.__setattr__(self, "components", c)

    @classmethod
    def flat(cls, grid: GridSpec, scale: float = 1.0) -> "MetricField":
        eye = np.eye(grid.n).reshape((grid.n, grid.n) + (1,) * grid.n)
        return cls(grid, scale * np.broadcast_to(eye, (grid.n, grid.n) + grid.shape).copy())

    @property
    def n(self) -> int:
        return self.grid.n

    def __add__(self, h) -> "MetricField":
        h = h.components if isinstance(h, MetricField) else np.asarray(h)
        return MetricField(self.grid, self.components + h)

    def eigenvalues(self) -> np.ndarray:
        """Pointwise eigenvalues against the coordinate metric, shape ``(n,) + grid.shape``."""
        mats = np.moveaxis(self.components.reshape(self.n, self.n, -1), -1, 0)
        ev = np.linalg.eigvalsh(mats)
        return np.moveaxis(ev, 0, -1).reshape((self.n,) + self.grid.shape)

    def check(self, mask=None) -> None:
        """Raise :class:`NumericalError` for non-positive or badly conditioned points."""
        ev = self.eigenvalues()
        lo, hi = ev[0], ev[-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            bad = (lo <= 0) | (hi / np.where(lo > 0, lo, np.nan) > MAX_CONDITION) | ~np.isfinite(lo)
        if mask is not None:
            bad &= mask
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            p = tuple(float(self.grid.coords[(a,) + idx]) for a in range(self.n))
            raise NumericalError(
                f"metric singular or ill-conditioned (min eigenvalue {lo[idx]:.3e}, max {hi[idx]:.3e})",
                location={"index": idx, "point": p},
            )


def symmetrize(t: np.ndarray) -> np.ndarray:
    return 0.5 * (t + np.swapaxes(t, 0, 1))


def metric_derivatives(g: np.ndarray, grid: GridSpec):
    """``dg[c, a, b] = d_c g_ab`` and ``ddg[c, d, a, b] = d_c d_d g_ab``."""
    n = grid.n
    dg = np.zeros((n,) + g.shape, dtype=g.dtype)
    ddg = np.zeros((n, n) + g.shape, dtype=g.dtype)
    for c in range(n):
        dg[c] = d1(g, grid, c)
    for c, d in sym_pairs(n):
        ddg[c, d] = d2(g, grid, c, d)
        if c != d:
            ddg[d, c] = ddg[c, d]
    return dg, ddg


def _inverse(g: np.ndarray) -> np.ndarray:
    """Inverse of stacked matrices with the stack axis last."""
    return np.moveaxis(np.linalg.inv(np.moveaxis(g, -1, 0)), 0, -1)


def _kernel(g, dg, ddg):
    """Pointwise curvature from metric jets.  Arrays carry a trailing point axis."""
    ginv = _inverse(g)
    gl = 0.5 * (dg.transpose(2, 0, 1, 3) + dg.transpose(2, 1, 0, 3) - dg)
    gu = np.einsum("klz,lijz->kijz", ginv, gl)
    dginv = -np.einsum("mkbz,lbz->mklz", np.einsum("kaz,mabz->mkbz", ginv, dg), ginv)
    dgl = 0.5 * (ddg.transpose(0, 3, 1, 2, 4) + ddg.transpose(0, 3, 2, 1, 4) - ddg)
    dgu = np.einsum("mklz,lijz->mkijz", dginv, gl) + np.einsum("klz,mlijz->mkijz", ginv, dgl)
    ric = (
        np.einsum("kkijz->ijz", dgu)
        - np.einsum("jkikz->ijz", dgu)
        + np.einsum("kklz,lijz->ijz", gu, gu)
        - np.einsum("kjlz,likz->ijz", gu, gu)
    )
    ric = symmetrize(ric)
    scal = np.einsum("ijz,ijz->z", ginv, ric)
    return ginv, gu, ric, scal


def _scalar_kernel(g, dg, ddg):
    """Scalar curvature alone, with every contraction done pairwise (cheaper than :func:`_kernel`)."""
    e = np.einsum
    ginv = _inverse(g)
    gl = 0.5 * (dg.transpose(2, 0, 1, 3) + dg.transpose(2, 1, 0, 3) - dg)
    dgl = 0.5 * (ddg.transpose(0, 3, 1, 2, 4) + ddg.transpose(0, 3, 2, 1, 4) - ddg)
    tmp = e("kaz,mabz->mkbz", ginv, dg)
    dginv = -e("mkbz,lbz->mklz", tmp, ginv)
    gu = e("klz,lijz->kijz", ginv, gl)
    # g^ij d_k Gamma^k_ij
    t1 = e("lz,lz->z", e("kklz->lz", dginv), e("ijz,lijz->lz", ginv, gl))
    t1 = t1 + e("klz,klz->z", ginv, e("ijz,klijz->klz", ginv, dgl))
    # g^ij d_i Gamma^k_kj
    t2 = e("ijz,ijz->z", ginv, e("iklz,lkjz->ijz", dginv, gl))
    t2 = t2 + e("klz,lkz->z", ginv, e("ijz,ilkjz->lkz", ginv, dgl))
    t3 = e("lz,lz->z", e("kklz->lz", gu), e("ijz,lijz->lz", ginv, gu))
    t4 = e("jklz,lkjz->z", e("ijz,kilz->jklz", ginv, gu), gu)
    return t1 - t2 + t3 - t4


def _chunks(size):
    for start in range(0, size, _CHUNK):
        yield slice(start, min(start + _CHUNK, size))


class Geometry:
    """Curvature quantities of one sampled metric, computed once and cached.

    Quantities are evaluated on the points at least one cell away from the box
    faces and are zero on the outer layer.
    """

    def __init__(self, g: MetricField, check: bool = True, region=None):
        self.metric = g
        self.grid = g.grid
        # points where the coefficients of P are needed (default: all computable points)
        self.region = self.grid.interior_mask(1) if region is None else np.asarray(region) & self.grid.interior_mask(1)
        if check:
            g.check(self.grid.interior_mask(1))
        self._dg, self._ddg = metric_derivatives(g.components, self.grid)

    def _flat(self, a, lead):
        return a.reshape(lead + (-1,))

    @cached_property
    def _basic(self):
        n, S = self.grid.n, self.grid.shape
        inner = self.grid.interior_mask(1).ravel()
        gf = self._flat(self.metric.components, (n, n))
        dgf = self._flat(self._dg, (n, n, n))
        ddgf = self._flat(self._ddg, (n, n, n, n))
        ginv = np.zeros_like(gf)
        gu = np.zeros((n, n, n, gf.shape[-1]))
        ric = np.zeros_like(gf)
        scal = np.zeros(gf.shape[-1])
        pts = np.flatnonzero(inner)
        for sl in _chunks(pts.size):
            p = pts[sl]
            a, b, c, d = _kernel(gf[..., p], dgf[..., p], ddgf[..., p])
            ginv[..., p], gu[..., p], ric[..., p], scal[p] = a, b, c, d
        # inverse is needed on the outer layer too (P* uses it via g^{ij})
        outer = np.flatnonzero(~inner)
        ginv[..., outer] = _inverse(gf[..., outer])
        return (
            ginv.reshape((n, n) + S),
            gu.reshape((n, n, n) + S),
            ric.reshape((n, n) + S),
            scal.reshape(S),
        )

    @property
    def inverse(self) -> np.ndarray:
        return self._basic[0]

    @property
    def christoffel(self) -> np.ndarray:
        """``Gamma[k, i, j]`` = Christoffel symbol of the second kind."""
        return self._basic[1]

    @property
    def ricci(self) -> np.ndarray:
        return self._basic[2]

    @property
    def scalar(self) -> np.ndarray:
        return self._basic[3]

    @cached_property
    def volume_density(self) -> np.ndarray:
        mats = np.moveaxis(self.metric.components.reshape(self.grid.n, self.grid.n, -1), -1, 0)
        return np.sqrt(np.linalg.det(mats)).reshape(self.grid.shape)

    # -- linearisation coefficients ---------------------------------------

    @cached_property
    def p_coefficients(self):
        """Coefficients ``(c0, c1, c2)`` of ``P h`` per independent component ``a <= b``.

        ``P h = sum_ab c0[ab] h_ab + sum_c c1[c, ab] d_c h_ab + sum_{c<=d} c2[cd, ab] d_c d_d h_ab``.
        """
        n = self.grid.n
        pairs = sym_pairs(n)
        npair = len(pairs)
        size = self.grid.size
        c0 = np.zeros((npair, size))
        c1 = np.zeros((n, npair, size))
        c2 = np.zeros((npair, npair, size))
        gf = self._flat(self.metric.components, (n, n))
        dgf = self._flat(self._dg, (n, n, n))
        ddgf = self._flat(self._ddg, (n, n, n, n))
        ginv_all = self._flat(self.inverse, (n, n))
        pts = np.flatnonzero(self.region.ravel())
        for sl in _chunks(pts.size):
            p = pts[sl]
            g0, dg0, ddg0 = gf[..., p], dgf[..., p], ddgf[..., p]
            for q, (a, b) in enumerate(pairs):
                gc = g0.astype(complex)
                gc[a, b] += 1j * _STEP
                if a != b:
                    gc[b, a] += 1j * _STEP
                c0[q, p] = _scalar_kernel(gc, dg0, ddg0).imag / _STEP
                for c in range(n):
                    dgc = dg0.astype(complex)
                    dgc[c, a, b] += 1j * _STEP
                    if a != b:
                        dgc[c, b, a] += 1j * _STEP
                    c1[c, q, p] = _scalar_kernel(g0, dgc, ddg0).imag / _STEP
            gi = ginv_all[..., p]
            # d R / d(d_c d_d g_ab) = g^{ca} g^{db} - g^{cd} g^{ab}
            q4 = np.einsum("caz,dbz->cdabz", gi, gi) - np.einsum("cdz,abz->cdabz", gi, gi)
            for r, (c, d) in enumerate(pairs):
                for q, (a, b) in enumerate(pairs):
                    val = np.zeros(p.size)
                    for cc, dd in {(c, d), (d, c)}:
                        for aa, bb in {(a, b), (b, a)}:
                            val += q4[cc, dd, aa, bb]
                    c2[r, q, p] = val
        return c0, c1, c2

    # -- operators ---------------------------------------------------------

    def apply_p(self, h: np.ndarray) -> np.ndarray:
        """Linearised scalar curvature ``P_g h`` for a symmetric tensor array ``h``."""
        n, S = self.grid.n, self.grid.shape
        c0, c1, c2 = self.p_coefficients
        pairs = sym_pairs(n)
        out = np.zeros(self.grid.size)
        for q, (a, b) in enumerate(pairs):
            hab = h[a, b]
            out += c0[q] * hab.ravel()
            for c in range(n):
                out += c1[c, q] * d1(hab, self.grid, c).ravel()
            for r, (c, d) in enumerate(pairs):
                out += c2[r, q] * d2(hab, self.grid, c, d).ravel()
        out = out.reshape(S)
        out[~self.region] = 0.0
        return out

    def covariant_hessian(self, f: np.ndarray) -> np.ndarray:
        gam = self.christoffel
        df = np.stack([d1(f, self.grid, k) for k in range(self.grid.n)])
        hess = np.empty((self.grid.n,) * 2 + f.shape)
        for i, j in sym_pairs(self.grid.n):
            hess[i, j] = d2(f, self.grid, i, j) - np.einsum("k...,k...->...", gam[:, i, j], df)
            hess[j, i] = hess[i, j]
        return hess

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return np.einsum("ij...,ij...->...", self.inverse, self.covariant_hessian(f))

    def apply_pstar(self, f: np.ndarray) -> np.ndarray:
        """Formal adjoint ``P*_g f = Hess f - (Lap f) g - f Ric``."""
        hess = self.covariant_hessian(f)
        lap = np.einsum("ij...,ij...->...", self.inverse, hess)
        out = hess - lap * self.metric.components - f * self.ricci
        out[(slice(None), slice(None)) + (~self.grid.interior_mask(1),)] = 0.0
        return symmetrize(out)

    # -- sparse forms ------------------------------------------------------

    @cached_property
    def _stencils(self):
        n = self.grid.n
        d1s = [sparse_d1(self.grid, c) for c in range(n)]
        d2s = {pr: sparse_d2(self.grid, *pr) for pr in sym_pairs(n)}
        return d1s, d2s

    def sparse_p(self) -> list[sp.csr_matrix]:
        """``P`` as one matrix per independent component ``h_ab`` (``a <= b``)."""
        n = self.grid.n
        d1s, d2s = self._stencils
        c0, c1, c2 = self.p_coefficients
        inner = self.region.ravel().astype(float)
        mats = []
        for q, _ in enumerate(sym_pairs(n)):
            m = sp.diags(c0[q])
            for c in range(n):
                m = m + sp.diags(c1[c, q]) @ d1s[c]
            for r, pr in enumerate(sym_pairs(n)):
                m = m + sp.diags(c2[r, q]) @ d2s[pr]
            mats.append((sp.diags(inner) @ m).tocsr())
        return mats

    def sparse_pstar(self) -> list[sp.csr_matrix]:
        """``P*`` rows for each independent output component ``(a, b)``, ``a <= b``."""
        n = self.grid.n
        d1s, d2s = self._stencils
        gam = self.christoffel.reshape((n, n, n, -1))
        ginv = self.inverse.reshape((n, n, -1))
        g = self.metric.components.reshape((n, n, -1))
        ric = self.ricci.reshape((n, n, -1))
        inner = self.grid.interior_mask(1).ravel().astype(float)

        def hess(i, j):
            m = d2s[(min(i, j), max(i, j))]
            for k in range(n):
                m = m - sp.diags(gam[k, i, j]) @ d1s[k]
            return m

        hs = {pr: hess(*pr) for pr in sym_pairs(n)}
        lap = sum(sp.diags(ginv[i, j] * (1 if i == j else 2)) @ hs[(i, j)] for i, j in sym_pairs(n))
        mats = []
        for a, b in sym_pairs(n):
            m = hs[(a, b)] - sp.diags(g[a, b]) @ lap - sp.diags(ric[a, b])
            mats.append((sp.diags(inner) @ m).tocsr())
        return mats


# ---------------------------------------------------------------------------
# functional interface


def christoffel(g: MetricField) -> np.ndarray:
    return Geometry(g).christoffel


def ricci(g: MetricField) -> np.ndarray:
    return Geometry(g).ricci


def scalar_curvature(g: MetricField) -> np.ndarray:
    return Geometry(g).scalar


def _check_support(h: np.ndarray, grid: GridSpec, lead: int):
    halo = ~grid.interior_mask()
    if np.any(h[(slice(None),) * lead + (halo,)] != 0):
        raise ValueError("field support touches the halo")


def linearized_scalar(g: MetricField, h: np.ndarray, geometry: Geometry | None = None) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    _check_support(h, g.grid, 2)
    geo = geometry or Geometry(g)
    return geo.apply_p(h)


def adjoint_linearized(g: MetricField, f: np.ndarray, geometry: Geometry | None = None) -> np.ndarray:
    geo = geometry or Geometry(g)
    return geo.apply_pstar(np.asarray(f, dtype=float))
