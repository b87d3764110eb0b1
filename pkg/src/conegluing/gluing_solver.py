"""The weighted fourth-order operator ``L = psi^-2 P(phi^4 psi^2 P* .)``, its
conjugate-gradient solution and the fixed-point iteration that drives
``R(g_chi + h)`` to ``R_chi``.

The operator is assembled in symmetric form.  With ``A`` the stencil matrix of
``P*`` (columns on the active set) and ``M`` the pointwise tensor inner product
``g^ia g^jb sqrt(det g) dV`` times ``W = phi^4 psi^2``,

    S = A^T M A,        B = diag(psi^2 sqrt(det g) dV),

and ``L = B^-1 S``.  ``S`` is symmetric positive semi-definite by construction,
so CG on ``S`` is CG on ``L`` in the ``psi^2``-weighted inner product.  On a flat
background ``M_s^-1 A^T M_t`` coincides with the stencil form of ``P``; in general
they differ at second order, which the outer iteration absorbs because its
residual always uses the exact discrete scalar curvature.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, NumericalError
from .grid import HALO, GridSpec, interpolate
from .interpolation import MetricPair, interpolate_metrics, target_scalar
from .tensor_calculus import Geometry, MetricField, sym_pairs
from .weights_cutoffs import LOG_UNDERFLOW, CutoffProfile, WeightParams, cutoff_chi, log_psi

log = logging.getLogger(__name__)

MODES = ("picard-frozen", "full-newton")
# |h| allowed on the collar fringe before extension by zero is refused
EXTENSION_THRESHOLD = 1e-14


@dataclass(frozen=True)
class SolverSettings:
    linear_tol: float = 1e-8
    nonlinear_tol: float = 1e-6
    max_iterations: int = 50
    max_linear_iterations: int = 20000
    mode: str = "picard-frozen"
    preconditioner: str = "jacobi"
    divergence_window: int = 3

    def __post_init__(self):
        if not (self.linear_tol > 0 and self.nonlinear_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 0 or self.max_linear_iterations < 1:
            raise ValueError("iteration limits must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.preconditioner not in ("jacobi", "amg", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class GluingProblem:
    pair: MetricPair
    domain: object
    weights: WeightParams
    cutoff: CutoffProfile = field(default_factory=CutoffProfile)
    r_in: float = 8.0
    r_out: float = 32.0
    rho_min: float = 0.05
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        self.weights.validate(gluing=True)
        if self.r_in < self.domain.R0:
            raise ValueError(f"r_in = {self.r_in} must be >= R0 = {self.domain.R0}")
        if not self.r_out > self.r_in:
            raise ValueError("r_out must exceed r_in")
        if not self.rho_min > 0:
            raise ValueError("rho_min must be positive")

    @property
    def grid(self) -> GridSpec:
        return self.pair.grid

    def describe(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "weights": self.weights.to_dict(),
            "cutoff": self.cutoff.to_dict(),
            "r_in": self.r_in,
            "r_out": self.r_out,
            "rho_min": self.rho_min,
            "settings": asdict(self.settings),
            "grid": self.grid.to_dict(),
        }


# ---------------------------------------------------------------------------
# masks and weights


@dataclass
class Layout:
    """Point sets of a problem: ``active`` carries unknowns, ``hmask`` is where ``h`` may be nonzero."""

    inside: np.ndarray
    x: np.ndarray
    r: np.ndarray
    active: np.ndarray
    hmask: np.ndarray
    log_w: np.ndarray  # log(phi^4 psi^2) on hmask, -inf elsewhere
    log_psi2: np.ndarray
    collar: np.ndarray  # inside the domain with x/r < rho_min

    @property
    def weight(self) -> np.ndarray:
        return np.where(self.log_w < LOG_UNDERFLOW, 0.0, np.exp(self.log_w))

    @property
    def masked_collar(self) -> np.ndarray:
        return self.collar


def layout(grid: GridSpec, domain, w: WeightParams, r_in=None, r_out=None, rho_min: float = 0.05) -> Layout:
    pts = grid.coords
    inside = domain.contains(pts)
    x = np.where(inside, domain.defining_function(pts, clip=True), 0.0)
    r = domain.radius_function(pts)
    ratio = x / r
    hmask = inside & (ratio >= rho_min) & grid.interior_mask(1)
    active = hmask & grid.interior_mask(HALO)
    if r_in is not None:
        active &= r >= r_in
    if r_out is not None:
        active &= r <= r_out
    if not active.any():
        raise ValueError("empty active set: the domain does not meet the truncation region on this grid")
    xs = np.where(hmask, x, 1.0)
    lp = np.where(hmask, log_psi(w, xs, r), -np.inf)
    log_w = np.where(hmask, 4 * np.log(xs**2 / r) + 2 * lp, -np.inf)
    return Layout(inside, x, r, active, hmask, log_w, 2 * lp, inside & (ratio < rho_min))


def _tensor_metric(ginv: np.ndarray, n: int) -> np.ndarray:
    """``G[q, r] = sum over index orderings of g^ia g^jb`` for independent pairs ``q=(i,j), r=(a,b)``."""
    pairs = sym_pairs(n)
    G = np.zeros((len(pairs), len(pairs)) + ginv.shape[2:])
    for q, (i, j) in enumerate(pairs):
        for t, (a, b) in enumerate(pairs):
            acc = 0.0
            for ii, jj in {(i, j), (j, i)}:
                for aa, bb in {(a, b), (b, a)}:
                    acc = acc + ginv[ii, aa] * ginv[jj, bb]
            G[q, t] = acc
    return G


# ---------------------------------------------------------------------------
# operator


class GluingOperator:
    """Symmetric assembly of ``L`` on the active set (see module docstring)."""

    def __init__(self, g: MetricField, lay: Layout, geometry: Geometry | None = None):
        self.grid = g.grid
        self.layout = lay
        self.metric = g
        geo = geometry or Geometry(g, region=lay.active)
        self.geometry = geo
        n = g.n
        self.pairs = sym_pairs(n)
        self.act_idx = np.flatnonzero(lay.active.ravel())
        self.h_idx = np.flatnonzero(lay.hmask.ravel())
        vol = geo.volume_density.ravel() * self.grid.cell_volume
        wgt = lay.weight.ravel()
        pst = geo.sparse_pstar()
        self.A = sp.vstack([m[self.h_idx][:, self.act_idx] for m in pst]).tocsr()
        G = _tensor_metric(geo.inverse.reshape((n, n, -1)), n)
        nh = self.h_idx.size
        scale = (wgt * vol)[self.h_idx]
        blocks = [[sp.diags(G[q, t][self.h_idx] * scale) for t in range(len(self.pairs))] for q in range(len(self.pairs))]
        self.M = sp.bmat(blocks, format="csr")
        self.S = (self.A.T @ (self.M @ self.A)).tocsr()
        self.S = (0.5 * (self.S + self.S.T)).tocsr()
        self.mass = (np.exp(lay.log_psi2.ravel()) * vol)[self.act_idx]
        self.volume = vol[self.act_idx]
        self._nh = nh

    @property
    def size(self) -> int:
        return self.act_idx.size

    def restrict(self, f: np.ndarray) -> np.ndarray:
        return np.asarray(f).ravel()[self.act_idx]

    def embed(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros(self.grid.size)
        out[self.act_idx] = u
        return out.reshape(self.grid.shape)

    def tensor(self, u: np.ndarray) -> np.ndarray:
        """``h = phi^4 psi^2 P* u`` for an active-set vector ``u``, as a full symmetric tensor field."""
        n = self.grid.n
        y = (self.A @ u).reshape(len(self.pairs), -1)
        w = self.layout.weight.ravel()[self.h_idx]
        h = np.zeros((n, n, self.grid.size))
        for q, (a, b) in enumerate(self.pairs):
            h[a, b, self.h_idx] = w * y[q]
            h[b, a, self.h_idx] = h[a, b, self.h_idx]
        return h.reshape((n, n) + self.grid.shape)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``L u`` on the active set."""
        return (self.S @ u) / self.mass

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """``psi^2``-weighted inner product of active-set vectors."""
        return float(np.sum(u * v * self.mass))

    def energy(self, u: np.ndarray) -> float:
        return float(u @ (self.S @ u))


def assemble_L(g_chi: MetricField, w: WeightParams, domain, r_in=None, r_out=None, rho_min: float = 0.05,
               geometry: Geometry | None = None) -> GluingOperator:
    """Assemble ``delta N -> psi^-2 P(phi^4 psi^2 P* delta N)`` restricted to the active set."""
    lay = layout(g_chi.grid, domain, w, r_in, r_out, rho_min)
    return GluingOperator(g_chi, lay, geometry)


# ---------------------------------------------------------------------------
# linear solve


@dataclass
class LinearResult:
    x: np.ndarray
    iterations: int
    residual: float
    history: list
    errors_a: list = field(default_factory=list)


def _amg_preconditioner(S: sp.csr_matrix):
    import pyamg

    d = S.diagonal()
    dinv = 1.0 / np.sqrt(d)
    Ds = sp.diags(dinv)
    T = (Ds @ S @ Ds).tocsr()
    ml = pyamg.smoothed_aggregation_solver(T, symmetry="symmetric", max_coarse=500)
    M = ml.aspreconditioner(cycle="V")
    return lambda r: dinv * M.matvec(dinv * r)


def pcg(S: sp.csr_matrix, b: np.ndarray, tol: float, maxiter: int, preconditioner: str = "jacobi",
        x0=None, norm_weight=None, track=None) -> LinearResult:
    """Preconditioned conjugate gradients.

    Convergence is measured on ``||r||_N / ||b||_N`` with ``N = diag(norm_weight)^-1``
    (the ``psi^2``-weighted norm of the residual of ``L``).  Reductions use numpy's
    pairwise summation so results do not depend on the BLAS thread count.
    ``track`` (a reference solution) records the energy-norm error per iteration.
    """
    nw = np.ones_like(b) if norm_weight is None else norm_weight

    def wnorm(v):
        return math.sqrt(float(np.sum(v * v / nw)))

    if preconditioner == "jacobi":
        dinv = 1.0 / S.diagonal()
        prec = lambda r: dinv * r  # noqa: E731
    elif preconditioner == "amg":
        prec = _amg_preconditioner(S)
    else:
        prec = lambda r: r  # noqa: E731
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - S @ x
    bnorm = wnorm(b)
    hist = [wnorm(r) / bnorm if bnorm > 0 else 0.0]
    errs = []
    if bnorm == 0:
        return LinearResult(np.zeros_like(b), 0, 0.0, hist)
    z = prec(r)
    p = z.copy()
    rz = float(np.sum(r * z))
    for k in range(1, maxiter + 1):
        q = S @ p
        pq = float(np.sum(p * q))
        if not pq > 0:
            raise NumericalError(f"operator is not positive definite (p^T S p = {pq:.3e} at CG step {k})")
        a = rz / pq
        x += a * p
        r -= a * q
        hist.append(wnorm(r) / bnorm)
        if track is not None:
            e = x - track
            errs.append(math.sqrt(max(float(np.sum(e * (S @ e))), 0.0)))
        if hist[-1] <= tol:
            return LinearResult(x, k, hist[-1], hist, errs)
        z = prec(r)
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"CG did not reach {tol:.1e} in {maxiter} iterations (residual {hist[-1]:.3e})", hist)


def solve_linear(L: GluingOperator, rhs: np.ndarray, tol: float = 1e-8, maxiter: int = 20000,
                 preconditioner: str = "jacobi", track=None) -> LinearResult:
    """Solve ``L u = rhs`` (active-set vectors) by CG in the ``psi^2``-weighted inner product."""
    b = L.mass * rhs
    return pcg(L.S, b, tol, maxiter, preconditioner, norm_weight=L.mass, track=track)


# ---------------------------------------------------------------------------
# nonlinear iteration


@dataclass
class SolveReport:
    rows: list = field(default_factory=list)
    initial_residual: float = 0.0
    final_residual: float = 0.0
    converged: bool = False
    timings: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    COLUMNS = ("iteration", "linear_iterations", "weighted_residual", "max_abs_h", "min_eigenvalue")

    @property
    def ratios(self) -> list:
        res = [row["weighted_residual"] for row in self.rows]
        return [b / a for a, b in zip(res, res[1:]) if a > 0]


@dataclass
class GluingSolution:
    problem: GluingProblem
    delta_n: np.ndarray
    h: np.ndarray
    g_chi: MetricField
    chi: np.ndarray
    r_chi: np.ndarray
    layout: Layout
    report: SolveReport
    operator: GluingOperator | None = None

    @property
    def glued(self) -> MetricField:
        return self.g_chi + self.h

    def residual(self) -> np.ndarray:
        return Geometry(self.glued, check=False).scalar - self.r_chi


def weighted_residual(res: np.ndarray, lay: Layout, volume: np.ndarray) -> float:
    """``(sum_active psi^-2 res^2 sqrt(det g) dV)^(1/2)``."""
    a = lay.active
    return math.sqrt(float(np.sum(np.exp(-lay.log_psi2[a]) * res[a] ** 2 * volume[a])))


def solve_gluing(problem: GluingProblem) -> GluingSolution:
    """Fixed-point iteration ``dN <- dN + L0^-1 psi^-2 (R_chi - R(g_chi + h(dN)))``."""
    st = problem.settings
    grid = problem.grid
    n = grid.n
    t0 = time.perf_counter()
    chi = cutoff_chi(problem.cutoff, problem.domain, grid.coords)
    g_chi = interpolate_metrics(problem.pair, chi)
    geo_g = Geometry(problem.pair.g)
    geo_h = geo_g if problem.pair.identical else Geometry(problem.pair.ghat)
    r_chi = target_scalar(problem.pair, chi, (geo_g, geo_h))
    lay = layout(grid, problem.domain, problem.weights, problem.r_in, problem.r_out, problem.rho_min)
    geo = Geometry(g_chi, region=lay.active)
    vol = geo.volume_density * grid.cell_volume
    res = r_chi - geo.scalar
    report = SolveReport(provenance=problem.describe())
    r0 = weighted_residual(res, lay, vol)
    report.initial_residual = r0
    zero_h = np.zeros((n, n) + grid.shape)

    def row(it, lin, rn, h, glued):
        report.rows.append({
            "iteration": it,
            "linear_iterations": lin,
            "weighted_residual": rn,
            "max_abs_h": float(np.abs(h).max()),
            "min_eigenvalue": float(glued.eigenvalues()[0].min()),
        })

    row(0, 0, r0, zero_h, g_chi)
    if problem.pair.identical or r0 == 0.0:
        report.converged = True
        report.final_residual = r0
        return GluingSolution(problem, np.zeros(grid.shape), zero_h, g_chi, chi, r_chi, lay, report)

    t1 = time.perf_counter()
    op = GluingOperator(g_chi, lay, geo)
    report.timings["assemble"] = time.perf_counter() - t1
    u = np.zeros(op.size)
    h = zero_h
    rn = r0
    growth = 0
    inv_psi2 = np.exp(-op.restrict(lay.log_psi2))
    for it in range(1, st.max_iterations + 1):
        lin = solve_linear(op, inv_psi2 * op.restrict(res), st.linear_tol, st.max_linear_iterations, st.preconditioner)
        if st.mode == "picard-frozen":
            u = u + lin.x
            h = op.tensor(u)
        else:
            h = h + op.tensor(lin.x)
            u = u + lin.x
        glued = g_chi + h
        try:
            geo_k = Geometry(glued, region=lay.active)
        except NumericalError as exc:
            raise NumericalError(f"glued metric lost positivity at iteration {it}: {exc}") from exc
        res = r_chi - geo_k.scalar
        prev, rn = rn, weighted_residual(res, lay, vol)
        row(it, lin.iterations, rn, h, glued)
        log.info("iteration %d: %d CG steps, residual %.3e (ratio %.3e)", it, lin.iterations, rn, rn / prev)
        if rn <= st.nonlinear_tol * r0:
            report.converged = True
            break
        growth = growth + 1 if rn > prev else 0
        if growth >= st.divergence_window:
            raise ConvergenceError(
                f"iteration diverging (residual grew {growth} times in a row, now {rn:.3e}); "
                "translate or scale the problem so the metrics are closer",
                [r["weighted_residual"] for r in report.rows],
            )
        if st.mode == "full-newton":
            op = GluingOperator(glued, lay, geo_k)
    else:
        raise ConvergenceError(
            f"no convergence in {st.max_iterations} iterations (residual {rn:.3e}, target {st.nonlinear_tol * r0:.3e})",
            [r["weighted_residual"] for r in report.rows],
        )
    report.final_residual = rn
    report.timings["total"] = time.perf_counter() - t0
    return GluingSolution(problem, op.embed(u), h, g_chi, chi, r_chi, lay, report, op)


# ---------------------------------------------------------------------------
# extension and diagnostics


def fringe(lay: Layout, width: int = 1) -> np.ndarray:
    """Cells of ``hmask`` within ``width`` cells of the masked collar or of the complement of the domain.

    Box faces are truncation boundaries, not part of the collar, and do not count.
    """
    from scipy import ndimage

    grown = ndimage.binary_dilation(lay.masked_collar | ~lay.inside, iterations=width)
    return grown & lay.hmask


def extend_by_zero(sol: GluingSolution, grid: GridSpec | None = None, threshold: float = EXTENSION_THRESHOLD,
                   strict: bool = True) -> tuple[MetricField, dict]:
    """Glued metric on ``grid``: ``g_chi + h`` with ``h`` extended by zero outside the unmasked cells.

    Returns the metric and a report with the fringe maximum of ``|h|``.  With
    ``strict`` a fringe above ``threshold`` raises :class:`NumericalError`.
    """
    fr = fringe(sol.layout)
    hmax = float(np.abs(sol.h[..., fr]).max()) if fr.any() else 0.0
    info = {"fringe_max_h": hmax, "threshold": threshold, "fringe_cells": int(fr.sum()), "ok": hmax <= threshold}
    if strict and hmax > threshold:
        raise NumericalError(f"|h| = {hmax:.3e} on the collar fringe exceeds {threshold:.0e}; increase rho_min")
    h = np.where(sol.layout.hmask, sol.h, 0.0)
    if grid is None or grid == sol.g_chi.grid:
        return sol.g_chi + h, info
    prob = sol.problem
    if prob.pair.sources is None:
        raise ValueError("resampling onto another grid needs analytic metric generators")
    pair = MetricPair.from_generators(*prob.pair.sources, grid)
    chi = cutoff_chi(prob.cutoff, prob.domain, grid.coords)
    hv = interpolate(h, sol.g_chi.grid, grid.coords, fill=0.0)
    out = interpolate_metrics(pair, chi).components + hv
    return MetricField(grid, 0.5 * (out + np.swapaxes(out, 0, 1))), info


def ansatz_mismatch(sol: GluingSolution) -> float:
    """Relative difference between the returned ``h`` and ``phi^4 psi^2 P* dN`` recomputed from ``dN``."""
    geo = Geometry(sol.g_chi, check=False)
    pst = geo.apply_pstar(sol.delta_n)
    h2 = np.where(sol.layout.hmask, sol.layout.weight * pst, 0.0)
    scale = np.abs(sol.h).max()
    return float(np.abs(h2 - sol.h).max() / scale) if scale > 0 else float(np.abs(h2).max())


def smallest_ritz_value(op: GluingOperator, k: int = 1, tol: float = 1e-8) -> float:
    """Smallest eigenvalue of ``L`` in the ``psi^2``-weighted inner product (``S v = lam B v``)."""
    from scipy.sparse.linalg import eigsh

    B = sp.diags(op.mass)
    if op.size <= 1500:
        from scipy.linalg import eigh

        return float(eigh(op.S.toarray(), np.diag(op.mass), eigvals_only=True, subset_by_index=[0, k - 1])[0])
    vals = eigsh(op.S.tocsc(), k=k, M=B.tocsc(), sigma=0.0, which="LM", tol=tol, return_eigenvectors=False)
    return float(np.min(vals))
