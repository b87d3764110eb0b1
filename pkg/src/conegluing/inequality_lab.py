"""Numerical checks of the weighted Poincare and Hardy inequalities.

Three settings are used:

* one-dimensional models on a log-spaced mesh (P1 finite elements, generalized
  eigenproblems) for the sharp constants;
* cone shells in spherical coordinates ``(r, theta, phi)`` about the axis,
  where ``x = r s(theta)`` is known in closed form and test fields are tensor
  products of bumps integrated by Gauss-Legendre quadrature on their support;
* grid fields on a :class:`MetricField` for the integral identity.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.optimize import brentq

from .errors import ConvergenceError
from .grid import gradient, integrate
from .tensor_calculus import Geometry, MetricField
from .weights_cutoffs import WeightParams, bump_profile, log_cutoff_xi


@dataclass
class InequalityReport:
    family: str
    lhs: float
    rhs: float
    boundary: float = 0.0
    constant: float = float("nan")
    slack: float = float("nan")
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("lhs", "rhs", "boundary"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite {name} in {self.family} report")

    def to_dict(self) -> dict:
        d = asdict(self)
        params = d.pop("params")
        return {**d, **{f"p_{k}": v for k, v in sorted(params.items())}}


def _bump_derivative(t):
    """Derivative of :func:`bump_profile`."""
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1
    ti = np.where(inside, t, 0.0)
    return np.where(inside, bump_profile(ti) * (-2 * ti / (1 - ti**2) ** 2), 0.0)


class Bump1D:
    """``bump((t - c) / w)`` on ``[c - w, c + w]`` with its derivative."""

    def __init__(self, lo: float, hi: float):
        if not hi > lo:
            raise ValueError("empty bump support")
        self.lo, self.hi = float(lo), float(hi)
        self.c, self.w = 0.5 * (lo + hi), 0.5 * (hi - lo)

    def __call__(self, t):
        return bump_profile((np.asarray(t) - self.c) / self.w)

    def deriv(self, t):
        return _bump_derivative((np.asarray(t) - self.c) / self.w) / self.w


def gauss(a: float, b: float, nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


# ---------------------------------------------------------------------------
# one-dimensional models


def _p1_matrices(mesh: np.ndarray, grad_w, val_w, quad: int = 4):
    """Banded stiffness / mass for P1 elements with weights ``grad_w(x)``, ``val_w(x)``."""
    xq, wq = np.polynomial.legendre.leggauss(quad)
    a, b = mesh[:-1], mesh[1:]
    h = b - a
    pts = 0.5 * (a[:, None] + b[:, None]) + 0.5 * h[:, None] * xq[None]
    wts = 0.5 * h[:, None] * wq[None]
    lam = 0.5 * (1 + xq)[None]  # local coordinate of the right hat
    kg = np.sum(wts * grad_w(pts), axis=1) / h**2
    mv = val_w(pts) * wts
    m00 = np.sum(mv * (1 - lam) ** 2, axis=1)
    m11 = np.sum(mv * lam**2, axis=1)
    m01 = np.sum(mv * lam * (1 - lam), axis=1)
    n = mesh.size
    Kd, Ko = np.zeros(n), np.zeros(n - 1)
    Md, Mo = np.zeros(n), np.zeros(n - 1)
    Kd[:-1] += kg
    Kd[1:] += kg
    Ko -= kg
    Md[:-1] += m00
    Md[1:] += m11
    Mo += m01
    return Kd, Ko, Md, Mo


@dataclass
class RayleighResult:
    constant: float
    minimizer: np.ndarray
    mesh: np.ndarray
    iterations: int
    history: list

    def quotient(self, u: np.ndarray) -> float:
        return self._q(u)


def rayleigh_min_1d(grad_exp: float, val_exp: float, s: float = 0.0, interval=(math.exp(-40.0), 1.0),
                    points: int = 10_000, tol: float = 1e-10, maxiter: int = 500, free_ends: bool = False):
    """Smallest value of ``int x^a_g e^{-s/x} u'^2 / int x^a_v e^{-s/x} u^2`` over P1 functions.

    ``u`` vanishes at both ends unless ``free_ends``, in which case the quotient
    is minimised over functions orthogonal to constants.  The mesh is
    logarithmic.  Shift-invert Lanczos on the diagonally scaled tridiagonal pair.
    Returns the constant, the minimiser and helpers to evaluate quotients.
    """
    lo, hi = interval
    if not 0 < lo < hi:
        raise ValueError("interval must satisfy 0 < lo < hi")
    mesh = np.geomspace(lo, hi, points)

    # e^{-s/x} is normalised at the right end to stay in range
    def gw(x):
        return np.exp(grad_exp * np.log(x) - s / x + s / hi)

    def vw(x):
        return np.exp(val_exp * np.log(x) - s / x + s / hi)

    Kd, Ko, Md, Mo = _p1_matrices(mesh, gw, vw)
    sl = slice(None) if free_ends else slice(1, -1)
    Kd, Md = Kd[sl], Md[sl]
    Ko, Mo = (Ko, Mo) if free_ends else (Ko[1:-1], Mo[1:-1])
    # symmetric diagonal scaling: unit mass diagonal
    D = 1.0 / np.sqrt(Md)
    Kd, Ko = Kd * D * D, Ko * D[:-1] * D[1:]
    Md_s, Mo_s = np.ones_like(Md), Mo * D[:-1] * D[1:]

    n = Kd.size
    K = sparse.diags([Ko, Kd, Ko], [-1, 0, 1], format="csc")
    M = sparse.diags([Mo_s, Md_s, Mo_s], [-1, 0, 1], format="csc")
    k = 2 if free_ends else 1
    # a small negative shift keeps the factorisation definite when the constant mode is present
    shift = -1e-8 * float(np.max(Kd)) if free_ends else 0.0
    v0 = np.sin(np.linspace(0, math.pi, n + 2)[1:-1])
    try:
        vals, vecs = eigsh(K, k=k, M=M, sigma=shift, which="LM", tol=tol, maxiter=maxiter, v0=v0)
    except ArpackNoConvergence as exc:
        raise ConvergenceError("shift-invert Lanczos did not converge", list(exc.eigenvalues)) from exc
    order = np.argsort(vals)
    lam = float(vals[order[-1]])
    v = vecs[:, order[-1]]
    it = k
    hist = [float(x) for x in vals[order]]
    full = np.zeros(points)
    full[sl] = v * D

    def kmul(u):
        return K @ u

    def mmul(u):
        return M @ u

    res = RayleighResult(lam, full, mesh, it, hist)

    def q(u):
        u = np.asarray(u, dtype=float)[sl] / D
        return float(np.sum(u * kmul(u)) / np.sum(u * mmul(u)))

    res._q = q
    return res


def hardy_reference(sigma: float) -> dict:
    """Sharp 1D constants for the two index normalisations in use."""
    return {"statement": (2 * sigma + 1) ** 2 / 4, "proof": (2 * sigma - 1) ** 2 / 4}


def hardy_constant(sigma: float, points: int = 10_000, log_span: float = 40.0) -> InequalityReport:
    """Best constant of ``int x^{2 sigma+2} u'^2 >= C int x^{2 sigma} u^2`` on ``(e^-span, 1)``."""
    res = rayleigh_min_1d(2 * sigma + 2, 2 * sigma, 0.0, (math.exp(-log_span), 1.0), points)
    ref = hardy_reference(sigma)
    return InequalityReport(
        "hardy_1d", lhs=res.constant, rhs=ref["statement"], constant=res.constant,
        slack=res.constant - ref["statement"],
        params={"sigma": sigma, "points": points, "log_span": log_span, "reference_statement": ref["statement"],
                "reference_proof": ref["proof"], "iterations": res.iterations},
    )


def exponential_constant(s: float, sigma: float = 0.0, collar: float = 0.1, points: int = 10_000,
                         lower: float | None = None) -> InequalityReport:
    """Best constant of ``int x^{4+2 sigma} e^{-s/x} u'^2 >= C int x^{2 sigma} e^{-s/x} u^2`` on ``(lower, collar)``
    (the collar slab at ``r = 1``)."""
    if s <= 0:
        raise ValueError("the exponential family needs s > 0")
    if lower is None:
        # below this the weight is e^-300 relative to the collar edge
        lower = s / (s / collar + 300.0)
    res = rayleigh_min_1d(4 + 2 * sigma, 2 * sigma, s, (lower, collar), points)
    return InequalityReport("exponential_1d", lhs=res.constant, rhs=s * s, constant=res.constant,
                            params={"s": s, "sigma": sigma, "collar": collar, "points": points, "lower": lower})


# ---------------------------------------------------------------------------
# half-ray inequality


def halfray_inequality(q: float, R: float, u=None, du=None, support=None, nodes: int = 200) -> InequalityReport:
    """``int_R^inf r^{q-1} u^2 <= C1 u(R)^2 + C2 int_R^inf r^{q+1} u'^2`` with the classical
    ``C2 = 4/q^2`` and ``C1 = -2 R^q / q``.

    ``u`` and ``du`` are callables supported in ``support`` (an interval in ``[R, inf)``).
    The report's ``constant`` is the smallest ``C2`` that works for this ``u``.
    """
    if q == 0:
        raise ValueError("the half-ray inequality needs q = 2 mu + 2 sigma + n != 0")
    c1, c2 = -2 * R**q / q, 4 / q**2
    if u is None:
        return InequalityReport("halfray", 0.0, 0.0, 0.0, c2, 0.0, {"q": q, "R": R, "C1": c1, "C2": c2})
    a, b = support
    if a < R:
        raise ValueError("support must lie in [R, inf)")
    rr, ww = gauss(a, b, nodes)
    lhs = float(np.sum(ww * rr ** (q - 1) * u(rr) ** 2))
    grad = float(np.sum(ww * rr ** (q + 1) * du(rr) ** 2))
    bdry = float(u(np.array([R]))[0] ** 2)
    rhs = c1 * bdry + c2 * grad
    # a negative value means the boundary term alone suffices
    cmin = max(0.0, (lhs - c1 * bdry) / grad) if grad > 0 else 0.0
    return InequalityReport("halfray", lhs, rhs, bdry, cmin, rhs - lhs, {"q": q, "R": R, "C1": c1, "C2": c2})


# ---------------------------------------------------------------------------
# master identity


def master_identity_check(u: np.ndarray, v: np.ndarray, w: np.ndarray, g: MetricField,
                          margin: int = 2) -> InequalityReport:
    """``int e^{2v}|grad u|^2 >= int e^{2v}[Lap v + Lap w + |grad v|^2 - |grad w|^2] u^2`` on a grid.

    ``u`` must vanish within ``margin`` cells of the box faces.  The report also
    carries the independent value ``int e^{2v}|grad u + u grad(v+w)|^2`` to which
    the slack is equal in the continuum.
    """
    grid = g.grid
    halo = ~grid.interior_mask(margin)
    if np.any(u[halo] != 0):
        raise ValueError("test field support touches the halo")
    geo = Geometry(g)
    gi = geo.inverse
    vol = geo.volume_density
    du, dv, dw = gradient(u, grid), gradient(v, grid), gradient(w, grid)

    def sq(a, b):
        return np.einsum("ij...,i...,j...->...", gi, a, b)

    e2v = np.exp(2 * v)
    supp = grid.interior_mask(1)
    bracket = geo.laplacian(v) + geo.laplacian(w) + sq(dv, dv) - sq(dw, dw)
    lhs = integrate(np.where(supp, e2v * sq(du, du) * vol, 0.0), grid)
    rhs = integrate(np.where(supp, e2v * bracket * u**2 * vol, 0.0), grid)
    comb = du + u * (dv + dw)
    oracle = integrate(np.where(supp, e2v * sq(comb, comb) * vol, 0.0), grid)
    return InequalityReport("master_identity", lhs, rhs, 0.0, float("nan"), lhs - rhs,
                            {"oracle": oracle, "scale": lhs + abs(rhs)})


# ---------------------------------------------------------------------------
# cone shells in spherical coordinates


def _spherical_frame(axis):
    ax = np.asarray(axis, dtype=float)
    ax = ax / np.linalg.norm(ax)
    e1 = np.eye(3)[0] - ax[0] * ax
    if np.linalg.norm(e1) < 1e-8:
        e1 = np.eye(3)[1] - ax[1] * ax
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(ax, e1), ax


def cartesian(domain, r, th, ph):
    e1, e2, e3 = _spherical_frame(domain.axis)
    st = np.sin(th)
    p = (r * st * np.cos(ph))[None] * e1.reshape(3, *([1] * np.ndim(r))) \
        + (r * st * np.sin(ph))[None] * e2.reshape(3, *([1] * np.ndim(r))) \
        + (r * np.cos(th))[None] * e3.reshape(3, *([1] * np.ndim(r)))
    return p + np.asarray(domain.apex).reshape(3, *([1] * np.ndim(r)))


def _coordinate_metric(domain, r, th, ph, diffeo=None):
    """Metric in ``(r, theta, phi)`` coordinates: flat, or the pull-back of ``delta`` by ``diffeo``."""
    st, ct = np.sin(th), np.cos(th)
    sp_, cp = np.sin(ph), np.cos(ph)
    e1, e2, e3 = _spherical_frame(domain.axis)
    shp = (3,) + (1,) * np.ndim(r)
    E1, E2, E3 = e1.reshape(shp), e2.reshape(shp), e3.reshape(shp)
    dr = st * cp * E1 + st * sp_ * E2 + ct * E3
    dth = r * (ct * cp * E1 + ct * sp_ * E2 - st * E3)
    dph = r * st * (-sp_ * E1 + cp * E2)
    J = np.stack([dr, dth, dph], axis=1)  # J[a, k] = d p^a / d q^k
    if diffeo is not None:
        jp = diffeo.jacobian(cartesian(domain, r, th, ph))
        J = np.einsum("ab...,bk...->ak...", jp, J)
    return np.einsum("ak...,al...->kl...", J, J)


def _volume_density(domain, r, th, ph, diffeo=None):
    if diffeo is None:
        return r**2 * np.sin(th)
    G = _coordinate_metric(domain, r, th, ph, diffeo)
    return np.sqrt(np.linalg.det(np.moveaxis(G, (0, 1), (-2, -1))))


@dataclass
class TestField:
    """``A bump(ln r) bump(theta) bump(phi)`` on a box in ``(ln r, theta, phi)``."""

    __test__ = False  # not a pytest class despite the name

    t_range: tuple
    th_range: tuple
    ph_range: tuple
    amplitude: float = 1.0
    region: str = ""

    def __post_init__(self):
        self.bt, self.bth, self.bph = Bump1D(*self.t_range), Bump1D(*self.th_range), Bump1D(*self.ph_range)

    def values(self, r, th, ph):
        t = np.log(r)
        return self.amplitude * self.bt(t) * self.bth(th) * self.bph(ph)

    def derivatives(self, r, th, ph):
        t = np.log(r)
        a, b, c = self.bt(t), self.bth(th), self.bph(ph)
        A = self.amplitude
        return np.stack([A * self.bt.deriv(t) / r * b * c, A * a * self.bth.deriv(th) * c, A * a * b * self.bph.deriv(ph)])

    def to_dict(self) -> dict:
        return {"t_range": self.t_range, "th_range": self.th_range, "ph_range": self.ph_range,
                "amplitude": self.amplitude, "region": self.region}


def random_test_fields(domain, count: int, seed: int, r_range=(1.0, 64.0), ratio_range=(1e-4, 0.5)) -> list[TestField]:
    """Bumps placed log-uniformly in ``r`` and in the distance to the boundary.

    Each support is a box: ``ln r`` in a subinterval of ``ln r_range``, ``theta``
    starting at ``theta1 + d`` (or ending at ``theta2 - d``) with ``d`` log-uniform
    over ``ratio_range``, and an azimuthal window.
    """
    rng = np.random.default_rng(seed)
    out = []
    t_lo, t_hi = math.log(r_range[0]), math.log(r_range[1])
    th1, th2 = domain.theta1, domain.theta2
    for _ in range(count):
        t0 = rng.uniform(t_lo, t_hi - 0.2)
        t1 = rng.uniform(t0 + 0.1, min(t_hi, t0 + 2.5))
        d = math.exp(rng.uniform(math.log(ratio_range[0]), math.log(ratio_range[1])))
        d = min(d, 0.9 * (th2 - th1))
        width = rng.uniform(0.2, 1.0) * min(th2 - th1 - d, max(d, 0.05 * (th2 - th1)))
        width = max(width, 1e-3 * (th2 - th1))
        if rng.random() < 0.5:
            rng_th = (th1 + d, min(th1 + d + width, th2))
            region = "A"
        else:
            rng_th = (max(th2 - d - width, th1), th2 - d)
            region = "B"
        ph0 = rng.uniform(-math.pi, math.pi)
        dph = rng.uniform(0.2, 2.0)
        out.append(TestField((t0, t1), rng_th, (ph0, ph0 + dph), 1.0, region))
    return out


def _theta_cut(domain, value: float):
    """Angles where ``s(theta) = value`` on either side of the maximum of ``s``."""
    mid = 0.5 * (domain.theta1 + domain.theta2)
    smax = float(domain.angular_profile(mid))
    if value >= smax:
        return None
    f = lambda th: float(domain.angular_profile(th)) - value  # noqa: E731
    a = brentq(f, domain.theta1, mid) if value > 0 else domain.theta1
    b = brentq(f, mid, domain.theta2) if value > 0 else domain.theta2
    return a, b


@dataclass
class ShellIntegrals:
    lhs: float
    grad: float
    sphere: float
    ball: float


def shell_integrals(u: TestField, domain, w: WeightParams, x0: float, R: float, nodes: int = 48,
                    family: str = "polynomial", diffeo=None) -> ShellIntegrals:
    """The four integrals of the weighted Poincare inequalities for a test field on a cone shell.

    ``polynomial``: weights ``x^{2 sigma} r^{2 mu}`` and ``x^{2 sigma+2} r^{2 mu}``.
    ``exponential``: weights ``x^{2 sigma} r^{2 mu} e^{-s r/x}`` and ``x^{2 sigma+4} r^{2 mu-2} e^{-s r/x}``.
    With ``diffeo`` the integrals are taken for the metric pulled back by it, which
    equals the flat integrals of the transported field on the image domain.
    """
    sig, mu, s = w.sigma, w.mu, w.s
    t, wt = gauss(*u.t_range, nodes)
    th, wth = gauss(*u.th_range, nodes)
    ph, wph = gauss(*u.ph_range, nodes)
    T, TH, PH = np.meshgrid(t, th, ph, indexing="ij")
    W = wt[:, None, None] * wth[None, :, None] * wph[None, None, :]
    r = np.exp(T)
    val = u.values(r, TH, PH)
    der = u.derivatives(r, TH, PH)
    if diffeo is None:
        st = np.sin(TH)
        vol = r**3 * st  # r^2 sin(theta) dr, dr = r dt
        grad2 = der[0] ** 2 + (der[1] / r) ** 2 + (der[2] / (r * st)) ** 2
    else:
        G = _coordinate_metric(domain, r, TH, PH, diffeo)
        Gm = np.moveaxis(G, (0, 1), (-2, -1))
        vol = np.sqrt(np.linalg.det(Gm)) * r
        Ginv = np.moveaxis(np.linalg.inv(Gm), (-2, -1), (0, 1))
        grad2 = np.einsum("kl...,k...,l...->...", Ginv, der, der)
    x = r * domain.angular_profile(TH)
    if family == "polynomial":
        lw = 2 * sig * np.log(x) + 2 * mu * np.log(r)
        gw = lw + 2 * np.log(x)
    elif family == "exponential":
        if s == 0:
            raise ValueError("exponential family needs s != 0")
        lw = 2 * sig * np.log(x) + 2 * mu * np.log(r) - s * r / x
        gw = lw + 4 * np.log(x) - 2 * np.log(r)
    else:
        raise ValueError(f"unknown family {family!r}")
    lhs = float(np.sum(W * vol * np.exp(lw) * val**2))
    grad = float(np.sum(W * vol * np.exp(gw) * grad2))
    # sphere term: r = R, x >= x0
    sphere = 0.0
    if u.t_range[0] < math.log(R) < u.t_range[1]:
        cut = _theta_cut(domain, x0 / R)
        if cut is not None:
            a, b = max(cut[0], u.th_range[0]), min(cut[1], u.th_range[1])
            if b > a:
                th2, wth2 = gauss(a, b, nodes)
                TH2, PH2 = np.meshgrid(th2, ph, indexing="ij")
                rr = np.full_like(TH2, R)
                Gs = _coordinate_metric(domain, rr, TH2, PH2, diffeo)
                area = np.sqrt(Gs[1, 1] * Gs[2, 2] - Gs[1, 2] ** 2)
                sphere = float(np.sum(wth2[:, None] * wph[None] * area * u.values(rr, TH2, PH2) ** 2))
    # ball term: r <= R, x >= x0, i.e. r >= x0 / s(theta); split the r-range per theta node
    ball = 0.0
    if u.t_range[0] < math.log(R):
        sv = domain.angular_profile(th)
        with np.errstate(divide="ignore"):
            lo = np.maximum(math.exp(u.t_range[0]), np.where(sv > 0, x0 / sv, np.inf))
        hi = min(math.exp(u.t_range[1]), R)
        ok = hi > lo
        if ok.any():
            # per theta node, Gauss nodes in ln r over [ln lo, ln hi]
            xg, wg = np.polynomial.legendre.leggauss(nodes)
            a, b = np.log(lo[ok]), math.log(hi)
            t2 = 0.5 * (b - a)[:, None] * xg[None] + 0.5 * (b + a)[:, None]
            wt2 = 0.5 * (b - a)[:, None] * wg[None]
            r2 = np.exp(t2)[:, :, None] * np.ones(ph.size)
            TH2 = np.broadcast_to(th[ok][:, None, None], r2.shape)
            PH2 = np.broadcast_to(ph[None, None, :], r2.shape)
            detb = _volume_density(domain, r2, TH2, PH2, diffeo)
            vals = u.values(r2, TH2, PH2)
            Wb = wth[ok][:, None, None] * wt2[:, :, None] * wph[None, None, :]
            ball = float(np.sum(Wb * r2 * detb * vals**2))
    return ShellIntegrals(lhs, grad, sphere, ball)


def full_poincare_check(u: TestField, w: WeightParams, domain, x0: float = 0.5, R: float = 4.0,
                        family: str = "polynomial", nodes: int = 48, diffeo=None) -> InequalityReport:
    """Smallest ``C`` for which the weighted Poincare inequality holds for this ``u``."""
    beta = w.sigma + w.mu + w.n / 2
    if family == "polynomial" and w.sigma == -0.5:
        raise ValueError("sigma = -1/2 is excluded")
    if family == "exponential" and w.s == 0:
        raise ValueError("s = 0 is excluded for the exponential family")
    if beta == 0:
        raise ValueError("sigma + mu + n/2 = 0 is excluded")
    I = shell_integrals(u, domain, w, x0, R, nodes, family, diffeo)
    rhs = I.sphere + I.ball + I.grad
    return InequalityReport(
        f"poincare_{family}", I.lhs, rhs, I.sphere + I.ball, I.lhs / rhs if rhs > 0 else math.inf, float("nan"),
        {"sigma": w.sigma, "mu": w.mu, "s": w.s, "n": w.n, "x0": x0, "R": R, "nodes": nodes,
         "sphere": I.sphere, "ball": I.ball, "grad": I.grad, "region": u.region},
    )


def _log_terms(domain, r, th, A: float, B: float):
    """Gradient components, squared norm and Laplacian of ``A ln r + B ln s(theta)`` (flat metric)."""
    s, sp, spp = domain.angular_profile(th, derivatives=2)
    fr = A / r
    fth = B * sp / s
    norm2 = fr**2 + (fth / r) ** 2
    lap = A / r**2 + B / r**2 * (np.cos(th) / np.sin(th) * sp / s + (spp * s - sp**2) / s**2)
    return fr, fth, norm2, lap


def master_identity_shell(u: TestField, domain, sigma: float, mu: float, nu: float = 0.0,
                          nodes: int = 48) -> InequalityReport:
    """Integral identity with ``v = sigma ln x + mu ln r`` and ``w = -ln(x)/2 + nu ln(r)/2``
    for a test field on a cone shell (flat metric, closed-form derivatives of ``v, w``)."""
    t, wt = gauss(*u.t_range, nodes)
    th, wth = gauss(*u.th_range, nodes)
    ph, wph = gauss(*u.ph_range, nodes)
    T, TH, PH = np.meshgrid(t, th, ph, indexing="ij")
    W = wt[:, None, None] * wth[None, :, None] * wph[None, None, :]
    r = np.exp(T)
    vol = r**3 * np.sin(TH)  # r^2 sin(theta) dr, dr = r dt
    # ln x = ln r + ln s(theta) for r >= 1
    vr, vth, v2, vlap = _log_terms(domain, r, TH, sigma + mu, sigma)
    wr, wth_, w2, wlap = _log_terms(domain, r, TH, -0.5 + nu / 2, -0.5)
    val = u.values(r, TH, PH)
    dr_, dth, dph = u.derivatives(r, TH, PH)
    e2v = np.exp(2 * ((sigma + mu) * np.log(r) + sigma * np.log(domain.angular_profile(TH))))
    st = np.sin(TH)
    gu2 = dr_**2 + (dth / r) ** 2 + (dph / (r * st)) ** 2
    lhs = float(np.sum(W * vol * e2v * gu2))
    rhs = float(np.sum(W * vol * e2v * (vlap + wlap + v2 - w2) * val**2))
    cr, cth = dr_ + val * (vr + wr), dth + val * (vth + wth_)
    oracle = float(np.sum(W * vol * e2v * (cr**2 + (cth / r) ** 2 + (dph / (r * st)) ** 2)))
    return InequalityReport("master_identity_shell", lhs, rhs, 0.0, float("nan"), lhs - rhs,
                            {"sigma": sigma, "mu": mu, "nu": nu, "oracle": oracle, "scale": lhs + abs(rhs),
                             "region": u.region})


def bracket_lower_bound(sigma: float, x) -> np.ndarray:
    """1D bracket ``Lap v + |v'|^2 + Lap w - |w'|^2`` for ``v = sigma ln x``, ``w = -ln(x)/2``."""
    x = np.asarray(x, dtype=float)
    # v' = sigma/x, v'' = -sigma/x^2, w' = -1/(2x), w'' = 1/(2x^2)
    return (-sigma + sigma**2 + 0.5 - 0.25) / x**2


def transported_check(diffeo, u: TestField, w: WeightParams, domain, x0: float = 0.5, R: float = 4.0,
                      family: str = "polynomial", nodes: int = 48, bound: float | None = None) -> InequalityReport:
    """Weighted Poincare inequality for the transported field on ``Psi(Omega)``.

    The implied constant ``C_Psi`` must satisfy ``C_Psi <= lam_max C_Omega`` where
    ``lam_max`` bounds the pulled-back metric from above (``bound``, default the
    log-rotation bracket 3).  The report's slack is ``lam_max C_Omega - C_Psi``.
    """
    base = full_poincare_check(u, w, domain, x0, R, family, nodes)
    moved = full_poincare_check(u, w, domain, x0, R, family, nodes, diffeo)
    lam = 3.0 if bound is None else bound
    return InequalityReport(
        f"transported_{family}", moved.lhs, moved.rhs, moved.boundary, moved.constant,
        lam * base.constant - moved.constant,
        {**moved.params, "base_constant": base.constant, "bound": lam, "bound_cubed": lam**3},
    )


def radius_equivalence(diffeo, grid_points: np.ndarray) -> tuple[float, float]:
    """Extremes of ``|Psi^-1(p)| / |p|`` over sample points (``C1^-1 <= ratio <= C1``)."""
    p = np.asarray(grid_points, dtype=float)
    n0 = np.sqrt(np.sum(p**2, axis=0))
    q = diffeo.inverse().apply(p)
    ratio = np.sqrt(np.sum(q**2, axis=0)) / n0
    return float(ratio.min()), float(ratio.max())


def cutoff_split(u: np.ndarray, lam: float, domain, points: np.ndarray) -> dict:
    """Split ``u = Xi u + (1 - Xi) u`` and report reassembly error and support brackets."""
    xi = log_cutoff_xi(lam, domain, points)
    v = xi * u
    wv = (1.0 - xi) * u
    x = domain.defining_function(points)
    r = domain.radius_function(points)
    ratio = x / r
    return {
        "reassembly_error": float(np.max(np.abs(v + wv - u))),
        "v_outside": bool(np.all(v[ratio > math.exp(-lam)] == 0)),
        "w_outside": bool(np.all(wv[ratio <= math.exp(-2 * lam)] == 0)),
    }


def corollary_quotient(sigma: float, points: int = 2000, interval=(1e-3, 1.0)) -> float:
    """Smallest ``int x^{2 sigma+2} u'^2 / int x^{2 sigma} u^2`` over functions orthogonal to constants
    (1D transverse model, no boundary conditions)."""
    return rayleigh_min_1d(2 * sigma + 2, 2 * sigma, 0.0, interval, points, free_ends=True).constant
