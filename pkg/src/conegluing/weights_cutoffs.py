"""Weights ``phi = x^2 / r`` and ``psi = r^mu x^sigma exp(-s r / x)``, the interpolation
cutoff ``chi``, the logarithmic cutoffs ``Xi_lambda`` and weighted Sobolev norms.

Every smooth transition in the package is built from the same mollifier,
``smooth_step``, derived from ``t -> exp(-1/t)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .errors import DomainError

# log of the smallest positive normal double; exp() of anything below is 0 anyway
LOG_UNDERFLOW = math.log(np.finfo(float).tiny)


def smooth_step(t, derivatives: int = 0):
    """C-infinity step: 0 for ``t <= 0``, 1 for ``t >= 1``, strictly monotone between.

    ``S(t) = e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)})``, written as a logistic of
    ``1/(1-t) - 1/t`` for stability.  With ``derivatives=k`` returns the value
    and the first ``k`` (at most 2) derivatives.
    """
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    ti = np.where(inside, t, 0.5)
    z = 1.0 / (1.0 - ti) - 1.0 / ti
    sig = expit(z)
    val = np.where(t >= 1, 1.0, np.where(inside, sig, 0.0))
    if derivatives == 0:
        return val
    ds = sig * (1 - sig)
    z1 = 1.0 / (1.0 - ti) ** 2 + 1.0 / ti**2
    first = np.where(inside, ds * z1, 0.0)
    if derivatives == 1:
        return val, first
    z2 = 2.0 / (1.0 - ti) ** 3 - 2.0 / ti**3
    second = np.where(inside, ds * (1 - 2 * sig) * z1**2 + ds * z2, 0.0)
    return val, first, second


def bump_profile(t):
    """``exp(1 - 1/(1 - t^2))`` on ``|t| < 1``, zero outside; equals 1 at ``t = 0``."""
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1
    ti = np.where(inside, t, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - ti**2)), 0.0)


@dataclass(frozen=True)
class WeightParams:
    """Weight exponents.  ``mu = -n/2 - beta`` is derived."""

    n: int = 3
    beta: float = -0.5
    sigma: float = 0.0
    s: float = 1.0
    k: int = 2
    eps: float = 0.25
    beta_tilde: float = -1.0

    @property
    def mu(self) -> float:
        return -self.n / 2 - self.beta

    @property
    def adm_compatible(self) -> bool:
        return self.beta >= -(self.n - 2) / 2

    def validate(self, gluing: bool = True) -> "WeightParams":
        n = self.n
        if n < 1:
            raise ValueError("n must be >= 1")
        if gluing:
            if n < 3:
                raise ValueError("gluing needs n >= 3")
            if not (-(n - 2) <= self.beta < 0):
                raise ValueError(f"beta must lie in [-(n-2), 0) = [{-(n - 2)}, 0), got {self.beta}")
            if not self.s > 0:
                raise ValueError(f"s must be > 0 for gluing, got {self.s}")
            if not self.k > n / 2:
                raise ValueError(f"k must exceed n/2 = {n / 2}, got {self.k}")
            if not self.eps > 0:
                raise ValueError("eps must be > 0")
            if not self.beta_tilde < min(self.beta, -self.eps):
                raise ValueError(
                    f"beta_tilde must be < min(beta, -eps) = {min(self.beta, -self.eps)}, got {self.beta_tilde}"
                )
        elif self.s < 0:
            raise ValueError("s must be >= 0")
        return self

    def to_dict(self) -> dict:
        return {**asdict(self), "mu": self.mu, "adm_compatible": self.adm_compatible}


@dataclass(frozen=True)
class CutoffProfile:
    """Transition window of ``chi`` in the normalised transverse coordinate ``tau``.

    ``tau`` runs from 0 on boundary component A to 1 on component B; ``chi`` is 1
    for ``tau <= lo`` and 0 for ``tau >= hi``.
    """

    lo: float = 1 / 3
    hi: float = 2 / 3

    def __post_init__(self):
        if not (0 < self.lo < self.hi < 1):
            raise ValueError(f"cutoff window must satisfy 0 < lo < hi < 1, got ({self.lo}, {self.hi})")

    def __call__(self, tau):
        return 1.0 - smooth_step((np.asarray(tau) - self.lo) / (self.hi - self.lo))

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "shape": "exp(-1/t) mollified step"}


def weight_phi(domain, points) -> np.ndarray:
    """``phi = x^2 / r``."""
    x = domain.defining_function(points)
    r = domain.radius_function(points)
    return x**2 / r


def log_psi(w: WeightParams, x, r) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("psi needs x > 0")
    return w.mu * np.log(r) + w.sigma * np.log(x) - w.s * r / x


def weight_psi(w: WeightParams, domain, points) -> np.ndarray:
    """``psi = r^mu x^sigma exp(-s r / x)``, accumulated in log space."""
    x = domain.defining_function(points)
    r = domain.radius_function(points)
    lp = log_psi(w, x, r)
    return np.where(lp < LOG_UNDERFLOW, 0.0, np.exp(lp))


def cutoff_chi(profile: CutoffProfile, domain, points) -> np.ndarray:
    return profile(domain.transverse_coordinate(points))


def log_cutoff_xi(lam: float, domain, points, gradient: bool = False):
    """``Xi_lambda = chi(-ln(x/r) / lambda)``, zero iff ``x >= e^-lambda r``, one iff ``x <= e^-2lambda r``.

    With ``gradient=True`` also returns the Euclidean gradient.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    x = domain.defining_function(points)
    r = domain.radius_function(points)
    ell = -np.log(x / r)
    if not gradient:
        return smooth_step(ell / lam - 1.0)
    val, ds = smooth_step(ell / lam - 1.0, derivatives=1)
    gx = domain.defining_function_gradient(points)
    gr = domain.radius_function_gradient(points)
    grad = ds / lam * (gr / r - gx / x)
    return val, grad


def inside_fraction(domain, grid, subsamples: int = 2) -> np.ndarray:
    """Fraction of each dual cell inside the domain, from ``subsamples^n`` sub-points."""
    n = grid.n
    offs = (np.arange(subsamples) + 0.5) / subsamples - 0.5
    frac = np.zeros(grid.shape)
    for combo in np.array(np.meshgrid(*([offs] * n), indexing="ij")).reshape(n, -1).T:
        shift = (combo * np.asarray(grid.spacing)).reshape((n,) + (1,) * n)
        frac += domain.contains(grid.coords + shift)
    return frac / subsamples**n


def weighted_norm(u, k: int, w: WeightParams, g, domain, geometry=None, fraction=None) -> float:
    """Weighted Sobolev norm ``(int sum_{i<=k} phi^{2i} |nabla^i u|_g^2 psi^2 dmu_g)^{1/2}``.

    ``u`` is a scalar field or a symmetric 2-tensor field sampled on ``g.grid``.
    Supported orders: scalars ``k <= 2``, tensors ``k <= 1``.
    """
    from .grid import d1, integrate
    from .tensor_calculus import Geometry

    if k < 0 or k > 2:
        raise ValueError(f"weighted_norm supports k in {{0, 1, 2}}, got {k}")
    grid = g.grid
    u = np.asarray(u, dtype=float)
    tensor = u.ndim == grid.n + 2
    if tensor and k > 1:
        raise ValueError("tensor norms are supported for k <= 1")
    if np.all(u == 0):
        return 0.0
    geo = geometry or Geometry(g)
    ginv = geo.inverse
    pts = grid.coords
    frac = inside_fraction(domain, grid) if fraction is None else fraction
    inside = frac > 0
    x = np.where(inside, domain.defining_function(pts, clip=True), 1.0)
    r = domain.radius_function(pts)
    lp = np.where(inside & (x > 0), log_psi(w, np.where(x > 0, x, 1.0), r), -np.inf)
    psi2 = np.where(lp < LOG_UNDERFLOW / 2, 0.0, np.exp(2 * lp))
    phi2 = (x**2 / r) ** 2
    if tensor:
        dens = np.einsum("ia...,jb...,ij...,ab...->...", ginv, ginv, u, u)
    else:
        dens = u**2
    if k >= 1:
        if tensor:
            gam = geo.christoffel
            du = np.stack([d1(u, grid, c) for c in range(grid.n)])
            # nabla_c h_ab = d_c h_ab - Gamma^d_ca h_db - Gamma^d_cb h_ad
            cov = du - np.einsum("dca...,db...->cab...", gam, u) - np.einsum("dcb...,ad...->cab...", gam, u)
            dens = dens + phi2 * np.einsum("ce...,ia...,jb...,cij...,eab...->...", ginv, ginv, ginv, cov, cov)
        else:
            du = np.stack([d1(u, grid, c) for c in range(grid.n)])
            dens = dens + phi2 * np.einsum("ij...,i...,j...->...", ginv, du, du)
    if k >= 2:
        hess = geo.covariant_hessian(u)
        dens = dens + phi2**2 * np.einsum("ia...,jb...,ij...,ab...->...", ginv, ginv, hess, hess)
    valid = grid.interior_mask(k) if k else np.ones(grid.shape, dtype=bool)
    val = integrate(np.where(valid, dens * psi2 * geo.volume_density * frac, 0.0), grid)
    return math.sqrt(max(val, 0.0))
