"""Domains that are scale-invariant at large distances, their defining functions,
and logarithmic-rotation diffeomorphisms with metric pull-backs.

Points are arrays of shape ``(n,) + S``.  All returned scalar quantities have
shape ``S``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DomainError
from .grid import interpolate
from .tensor_calculus import MetricField
from .weights_cutoffs import smooth_step


def _bcast(v, ndim):
    v = np.asarray(v, dtype=float)
    return v.reshape((-1,) + (1,) * (ndim - 1))


def radius_profile(t, derivative: bool = False):
    """Smooth radius ``r(t)``: equals ``t`` for ``t >= 1``, equals 1/2 for ``t <= 1/2``."""
    T, dT = smooth_step(2 * np.asarray(t, dtype=float) - 1, derivatives=1)
    r = t * T + 0.5 * (1 - T)
    if not derivative:
        return r
    return r, T + (t - 0.5) * 2 * dT


class TennisBallSampler:
    """Signed angular distance to the tennis-ball seam on the unit sphere.

    The seam is ``(a cos t + b cos 3t, a sin t - b sin 3t, c sin 2t)`` normalised,
    sampled at ``samples`` points.  The sign distinguishes the two halves.
    """

    def __init__(self, a: float = 0.75, b: float = 0.25, samples: int = 4000):
        t = np.linspace(0, 2 * np.pi, samples, endpoint=False)
        c = 2 * math.sqrt(a * b)
        curve = np.stack([a * np.cos(t) + b * np.cos(3 * t), a * np.sin(t) - b * np.sin(3 * t), c * np.sin(2 * t)])
        self.curve = curve / np.linalg.norm(curve, axis=0)
        tang = np.roll(self.curve, -1, axis=1) - np.roll(self.curve, 1, axis=1)
        self.normal = np.cross(self.curve.T, tang.T).T
        self.normal /= np.linalg.norm(self.normal, axis=0)
        self.a, self.b = a, b

    def signed_angle(self, directions: np.ndarray) -> np.ndarray:
        shape = directions.shape[1:]
        d = directions.reshape(3, -1)
        out = np.empty(d.shape[1])
        for start in range(0, d.shape[1], 4096):
            blk = d[:, start:start + 4096]
            cos = np.clip(self.curve.T @ blk, -1, 1)
            j = np.argmax(cos, axis=0)
            ang = np.arccos(cos[j, np.arange(blk.shape[1])])
            side = np.sign(np.einsum("ij,ij->j", self.normal[:, j], blk))
            out[start:start + 4096] = np.where(side == 0, 1, side) * ang
        return out.reshape(shape)

    def describe(self):
        return {"sampler": "tennis_ball", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class DomainSpec:
    """Cone shell ``theta1 < theta < theta2`` about ``axis`` with vertex ``apex``, or a
    generic scale-invariant thickening described by a signed-angle sampler.

    ``collar`` is the ratio ``c`` below which ``x`` equals the distance to the boundary.
    """

    kind: str = "cone_shell"
    theta1: float = math.pi / 6
    theta2: float = math.pi / 3
    axis: tuple = (0.0, 0.0, 1.0)
    apex: tuple = (0.0, 0.0, 0.0)
    R0: float = 1.0
    collar: float = 0.1
    half_width: float = 0.3
    sampler: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        ax = np.asarray(self.axis, dtype=float)
        object.__setattr__(self, "axis", tuple(ax / np.linalg.norm(ax)))
        object.__setattr__(self, "apex", tuple(float(v) for v in self.apex))
        if len(self.apex) != len(self.axis):
            raise ValueError("apex and axis must have the same dimension")
        if self.R0 < 1:
            raise ValueError("R0 must be >= 1")
        if not 0 < self.collar < 1:
            raise ValueError("collar ratio must lie in (0, 1)")
        if self.kind == "cone_shell":
            if not 0 < self.theta1 < self.theta2 < math.pi:
                raise ValueError(f"need 0 < theta1 < theta2 < pi, got {self.theta1}, {self.theta2}")
            w = 0.5 * (self.theta2 - self.theta1)
            if not self.collar < math.sin(w):
                raise ValueError(f"collar ratio must be < sin((theta2 - theta1)/2) = {math.sin(w):.4f}")
        elif self.kind == "generic":
            if self.sampler is None:
                object.__setattr__(self, "sampler", TennisBallSampler())
            if len(self.axis) != 3:
                raise ValueError("generic domains are implemented for n = 3")
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @property
    def n(self) -> int:
        return len(self.axis)

    # -- coordinates -------------------------------------------------------

    def _rel(self, points):
        points = np.asarray(points, dtype=float)
        return points - _bcast(self.apex, points.ndim)

    def norm(self, points) -> np.ndarray:
        return np.sqrt(np.sum(self._rel(points) ** 2, axis=0))

    def polar_angle(self, points) -> np.ndarray:
        p = self._rel(points)
        ax = _bcast(self.axis, p.ndim)
        along = np.sum(p * ax, axis=0)
        perp = np.sqrt(np.maximum(np.sum(p * p, axis=0) - along**2, 0.0))
        return np.arctan2(perp, along)

    def radius_function(self, points) -> np.ndarray:
        return radius_profile(self.norm(points))

    def radius_function_gradient(self, points) -> np.ndarray:
        p = self._rel(points)
        t = np.sqrt(np.sum(p * p, axis=0))
        _, dr = radius_profile(t, derivative=True)
        return dr * p / np.where(t > 0, t, 1.0)

    # -- cone-shell angular profile ----------------------------------------

    @property
    def _blend(self):
        w = 0.5 * (self.theta2 - self.theta1)
        delta = w - math.asin(self.collar)
        return self.theta1 + w, delta

    def angular_profile(self, theta, derivatives: int = 0):
        """``s(theta)`` with ``x = r s(theta)``; equals ``sin`` of the angular distance near each cone."""
        th = np.asarray(theta, dtype=float)
        mid, delta = self._blend
        B, dB, ddB = smooth_step((th - (mid - delta)) / (2 * delta), derivatives=2)
        dB, ddB = dB / (2 * delta), ddB / (2 * delta) ** 2
        a, b = th - self.theta1, self.theta2 - th
        d1v, d2v = np.sin(a), np.sin(b)
        s = d1v + B * (d2v - d1v)
        if derivatives == 0:
            return s
        d1p, d2p = np.cos(a), -np.cos(b)
        sp = d1p + dB * (d2v - d1v) + B * (d2p - d1p)
        spp = -d1v + ddB * (d2v - d1v) + 2 * dB * (d2p - d1p) + B * (d1v - d2v)
        return s, sp, spp

    # -- public geometry ---------------------------------------------------

    def _generic_signed(self, points):
        p = self._rel(points)
        t = np.sqrt(np.sum(p * p, axis=0))
        return self.sampler.signed_angle(p / np.where(t > 0, t, 1.0))

    def contains(self, points) -> np.ndarray:
        if self.kind == "cone_shell":
            th = self.polar_angle(points)
            return (th > self.theta1) & (th < self.theta2) & (self.norm(points) > 0)
        return np.abs(self._generic_signed(points)) < self.half_width

    def defining_function(self, points, clip: bool = False) -> np.ndarray:
        """Defining function ``x``; homogeneous of degree one outside ``B(0, R0)``.

        Raises :class:`DomainError` for points outside the closure of the domain
        unless ``clip`` is set, in which case such points get ``x = 0``.
        """
        if self.kind == "cone_shell":
            th = self.polar_angle(points)
            outside = (th < self.theta1 - 1e-12) | (th > self.theta2 + 1e-12)
            s = self.angular_profile(np.clip(th, self.theta1, self.theta2))
        else:
            d = self._generic_signed(points)
            outside = np.abs(d) > self.half_width + 1e-12
            w = self.half_width
            s = np.maximum(w * w - d * d, 0.0) / (2 * w)
        if np.any(outside) and not clip:
            raise DomainError(f"{int(np.count_nonzero(outside))} point(s) outside the closure of the domain")
        return np.where(outside, 0.0, self.radius_function(points) * s)

    def defining_function_gradient(self, points) -> np.ndarray:
        if self.kind != "cone_shell":
            raise NotImplementedError("analytic gradient only for cone shells")
        p = self._rel(points)
        ax = _bcast(self.axis, p.ndim)
        t = np.sqrt(np.sum(p * p, axis=0))
        th = self.polar_angle(points)
        s, sp, _ = self.angular_profile(th, derivatives=1 + 1)
        rr = self.radius_function(points)
        # unit vector e_theta = (cos th * e_r - axis) / sin th
        er = p / np.where(t > 0, t, 1.0)
        e_th = (np.cos(th) * er - ax) / np.where(np.sin(th) > 0, np.sin(th), 1.0)
        return s * self.radius_function_gradient(points) + rr * sp * e_th / np.where(t > 0, t, 1.0)

    def transverse_coordinate(self, points) -> np.ndarray:
        """0 on boundary component A, 1 on component B, scale invariant outside ``B(0, R0)``."""
        if self.kind == "cone_shell":
            th = np.clip(self.polar_angle(points), self.theta1, self.theta2)
            return (th - self.theta1) / (self.theta2 - self.theta1)
        d = np.clip(self._generic_signed(points), -self.half_width, self.half_width)
        return 0.5 * (d / self.half_width + 1.0)

    def bisector(self, r) -> np.ndarray:
        """Points on the central ray ``theta = (theta1 + theta2)/2`` in the first coordinate plane."""
        r = np.asarray(r, dtype=float)
        th = 0.5 * (self.theta1 + self.theta2)
        ax = np.asarray(self.axis)
        perp = np.eye(self.n)[0] - ax[0] * ax
        if np.linalg.norm(perp) < 1e-8:
            perp = np.eye(self.n)[1] - ax[1] * ax
        perp /= np.linalg.norm(perp)
        direction = math.cos(th) * ax + math.sin(th) * perp
        return _bcast(self.apex, r.ndim + 1) + direction.reshape((-1,) + (1,) * r.ndim) * r

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "R0": self.R0, "collar": self.collar, "axis": list(self.axis), "apex": list(self.apex)}
        if self.kind == "cone_shell":
            d.update(theta1=self.theta1, theta2=self.theta2)
        else:
            d.update(half_width=self.half_width, **self.sampler.describe())
        return d


def defining_function(d: DomainSpec, p) -> np.ndarray:
    return d.defining_function(p)


def radius_function(d: DomainSpec, p) -> np.ndarray:
    return d.radius_function(p)


def boundary_components(d: DomainSpec, n_theta: int = 180, n_phi: int = 360) -> tuple[int, int]:
    """Connected components of ``Omega_S`` and of its boundary on a sampled unit sphere."""
    if d.n != 3:
        raise ValueError("sphere sampling implemented for n = 3")
    th = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    ph = np.arange(n_phi) * 2 * np.pi / n_phi
    T, P = np.meshgrid(th, ph, indexing="ij")
    ax = np.asarray(d.axis)
    e1 = np.eye(3)[0] - ax[0] * ax
    if np.linalg.norm(e1) < 1e-8:
        e1 = np.eye(3)[1] - ax[1] * ax
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(ax, e1)
    dirs = (np.sin(T) * np.cos(P))[None] * e1[:, None, None] + (np.sin(T) * np.sin(P))[None] * e2[:, None, None]
    dirs = dirs + np.cos(T)[None] * ax[:, None, None]
    pts = _bcast(d.apex, 3) + d.R0 * 2 * dirs
    inside = d.contains(pts)
    shifted = [np.roll(inside, 1, 1), np.roll(inside, -1, 1)]
    shifted += [np.vstack([inside[:1], inside[:-1]]), np.vstack([inside[1:], inside[-1:]])]
    edge = inside & ~np.logical_and.reduce(shifted)

    def count(mask):
        lab, k = ndimage.label(mask)
        # glue across the periodic azimuth seam
        pairs = {(a, b) for a, b in zip(lab[:, 0], lab[:, -1]) if a and b and a != b}
        parent = list(range(k + 1))

        def find(i):
            while parent[i] != i:
                i = parent[i]
            return i

        for a, b in pairs:
            parent[find(a)] = find(b)
        return len({find(i) for i in range(1, k + 1)})

    return count(inside), count(edge)


# ---------------------------------------------------------------------------
# diffeomorphisms


@dataclass(frozen=True)
class DiffeoSpec:
    """``identity``, ``log_rotation`` (angle ``alpha ln|p|``), ``regularized``
    (angle ``alpha ln sqrt(rho^2 + 1)``, ``rho`` the distance to the axis) or
    ``composition`` of ``parts`` applied first to last.
    """

    kind: str = "identity"
    alpha: float = 0.0
    axis: tuple = (0.0, 0.0, 1.0)
    parts: tuple = ()

    def __post_init__(self):
        if self.kind not in ("identity", "log_rotation", "regularized", "composition"):
            raise ValueError(f"unknown diffeomorphism kind {self.kind!r}")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        ax = np.asarray(self.axis, dtype=float)
        object.__setattr__(self, "axis", tuple(ax / np.linalg.norm(ax)))
        object.__setattr__(self, "parts", tuple(self.parts))

    @property
    def n(self):
        return len(self.axis)

    @property
    def uniformly_equivalent(self) -> bool:
        """``|alpha| < 1`` for every rotation, which guarantees the pull-back of
        ``delta`` is bounded above and below by multiples of ``delta``."""
        if self.kind == "composition":
            return all(p.uniformly_equivalent for p in self.parts)
        return self.kind == "identity" or abs(self.alpha) < 1

    def require_equivalence(self) -> "DiffeoSpec":
        if not self.uniformly_equivalent:
            raise ValueError("log rotations need |alpha| < 1 to keep the pulled-back metric uniformly equivalent")
        return self

    def _plane(self):
        n = self.n
        if n == 3:
            ax = np.asarray(self.axis)
            u = np.eye(3)[0] - ax[0] * ax
            if np.linalg.norm(u) < 1e-8:
                u = np.eye(3)[1] - ax[1] * ax
            u /= np.linalg.norm(u)
            return u, np.cross(ax, u)
        return np.eye(n)[0], np.eye(n)[1]

    def _angle(self, p):
        u, v = self._plane()
        if self.kind == "log_rotation":
            t = np.sqrt(np.sum(p * p, axis=0))
            if np.any(t < 1 - 1e-12):
                raise DomainError("pure log rotation is only defined for |p| >= 1; use the regularized kind")
            return self.alpha * np.log(t), self.alpha * p / np.maximum(t, 1e-300) ** 2
        pu, pv = np.tensordot(u, p, 1), np.tensordot(v, p, 1)
        q = pu**2 + pv**2 + 1
        grad = _bcast(u, p.ndim) * pu + _bcast(v, p.ndim) * pv
        return 0.5 * self.alpha * np.log(q), self.alpha * grad / q

    def _rotate(self, p, t):
        u, v = self._plane()
        pu, pv = np.tensordot(u, p, 1), np.tensordot(v, p, 1)
        c, s = np.cos(t), np.sin(t)
        U, V = _bcast(u, p.ndim), _bcast(v, p.ndim)
        out = p + U * ((c - 1) * pu - s * pv) + V * (s * pu + (c - 1) * pv)
        deriv = U * (-s * pu - c * pv) + V * (c * pu - s * pv)
        return out, deriv

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if self.kind == "identity" or (self.kind != "composition" and self.alpha == 0):
            return p.copy()
        if self.kind == "composition":
            for part in self.parts:
                p = part.apply(p)
            return p
        t, _ = self._angle(p)
        return self._rotate(p, t)[0]

    def inverse(self) -> "DiffeoSpec":
        if self.kind == "composition":
            return DiffeoSpec("composition", parts=tuple(p.inverse() for p in reversed(self.parts)), axis=self.axis)
        return DiffeoSpec(self.kind, -self.alpha, self.axis)

    def jacobian(self, points) -> np.ndarray:
        """``J[a, i] = d Psi^a / d p^i``."""
        p = np.asarray(points, dtype=float)
        n = p.shape[0]
        eye = np.broadcast_to(np.eye(n).reshape((n, n) + (1,) * (p.ndim - 1)), (n, n) + p.shape[1:])
        if self.kind == "identity" or (self.kind != "composition" and self.alpha == 0):
            return eye.copy()
        if self.kind == "composition":
            jac = eye.copy()
            for part in self.parts:
                jac = np.einsum("ab...,bi...->ai...", part.jacobian(p), jac)
                p = part.apply(p)
            return jac
        t, dt = self._angle(p)
        u, v = self._plane()
        c, s = np.cos(t), np.sin(t)
        rot = eye + (c - 1) * (np.multiply.outer(u, u) + np.multiply.outer(v, v)).reshape((n, n) + (1,) * (p.ndim - 1))
        rot = rot + s * (np.multiply.outer(v, u) - np.multiply.outer(u, v)).reshape((n, n) + (1,) * (p.ndim - 1))
        _, deriv = self._rotate(p, t)
        return rot + deriv[:, None] * dt[None, :]

    def describe(self) -> dict:
        if self.kind == "composition":
            return {"kind": self.kind, "parts": [p.describe() for p in self.parts]}
        return {"kind": self.kind, "alpha": self.alpha, "axis": list(self.axis)}


def apply_diffeo(psi: DiffeoSpec, p) -> np.ndarray:
    return psi.apply(p)


def _has_pure_log(psi: DiffeoSpec) -> bool:
    if psi.kind == "composition":
        return any(_has_pure_log(p) for p in psi.parts)
    return psi.kind == "log_rotation" and psi.alpha != 0


def pullback_metric(psi: DiffeoSpec, g: MetricField, return_mask: bool = False):
    """``(Psi^* g)_ij(p) = d_i Psi^a d_j Psi^b g_ab(Psi(p))`` with multilinear interpolation.

    Points whose image leaves the grid (or the chart) keep the coordinate metric
    and are reported through the mask (``True`` = valid).
    """
    if psi.kind == "identity":
        return (g, np.ones(g.grid.shape, dtype=bool)) if return_mask else g
    pts = g.grid.coords
    n = g.n
    norm = np.sqrt(np.sum(pts**2, axis=0))
    valid = np.ones(g.grid.shape, dtype=bool)
    if _has_pure_log(psi):
        # rotations preserve |p|, so the chart condition can be read off the input point
        valid &= norm >= 1
    # out-of-chart points are evaluated at a harmless stand-in and masked afterwards
    stand_in = 2.0 * np.eye(n)[0].reshape((n,) + (1,) * n)
    safe = np.where(valid[None], pts, stand_in)
    image = psi.apply(safe)
    jac = psi.jacobian(safe)
    gi = interpolate(g.components, g.grid, image)
    valid &= np.all(np.isfinite(gi), axis=(0, 1))
    eye = np.broadcast_to(np.eye(n).reshape((n, n) + (1,) * n), gi.shape)
    gi = np.where(valid, gi, eye)
    out = np.einsum("ai...,ab...,bj...->ij...", jac, gi, jac)
    out = np.where(valid, 0.5 * (out + np.swapaxes(out, 0, 1)), eye)
    res = MetricField(g.grid, out)
    return (res, valid) if return_mask else res


def uniform_equivalence_bounds(g1: MetricField, g2: MetricField, mask=None) -> tuple[float, float]:
    """Extreme generalised eigenvalues of ``g1`` relative to ``g2`` over ``mask``."""
    if g1.grid != g2.grid:
        raise ValueError("metrics live on different grids")
    n = g1.n
    a = np.moveaxis(g1.components.reshape(n, n, -1), -1, 0)
    b = np.moveaxis(g2.components.reshape(n, n, -1), -1, 0)
    if mask is not None:
        sel = np.asarray(mask).ravel()
        a, b = a[sel], b[sel]
    wb, vb = np.linalg.eigh(b)
    if np.any(wb <= 0):
        raise ValueError("reference metric is not positive definite")
    half = vb / np.sqrt(wb)[:, None, :]
    m = np.einsum("zai,zab,zbj->zij", half, a, half)
    ev = np.linalg.eigvalsh(m)
    if np.any(ev[:, 0] <= 0):
        raise ValueError("metric is not positive definite")
    return float(ev[:, 0].min()), float(ev[:, -1].max())


def log_rotation_pullback(alpha: float, points, axis=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Cartesian components of ``Psi_alpha^* delta`` from the spherical closed form

    ``(1 + alpha^2 sin^2 theta) dr^2 + r^2 (dtheta^2 + sin^2 theta dphi^2) + 2 alpha r sin^2 theta dr dphi``

    (the cross term carries ``sin^2 theta``, as the completed square shows).
    """
    p = np.asarray(points, dtype=float)
    if p.shape[0] != 3:
        raise ValueError("closed form is for n = 3")
    psi = DiffeoSpec("log_rotation", alpha, axis)
    u, v = psi._plane()
    ax = np.asarray(psi.axis)
    a, b, c = np.tensordot(u, p, 1), np.tensordot(v, p, 1), np.tensordot(ax, p, 1)
    r = np.sqrt(a * a + b * b + c * c)
    rho = np.sqrt(a * a + b * b)
    st, ct = rho / r, c / r
    cp, sp_ = a / rho, b / rho
    # rows: gradients of r, theta, phi in the (u, v, axis) frame
    U, V, A = (_bcast(e, p.ndim) for e in (u, v, ax))
    dr = (a * U + b * V + c * A) / r
    dth = (ct * (cp * U + sp_ * V) - st * A) / r
    dph = (-sp_ * U + cp * V) / rho
    grr = 1 + alpha**2 * st**2
    grp = alpha * r * st**2
    out = (grr * dr[:, None] * dr[None] + r**2 * dth[:, None] * dth[None]
           + (r * st) ** 2 * dph[:, None] * dph[None] + grp * (dr[:, None] * dph[None] + dph[:, None] * dr[None]))
    return out


def log_rotation_eigen_bracket(alpha: float, theta=np.pi / 2) -> tuple[float, float]:
    """Exact extreme eigenvalues of ``Psi_alpha^* delta`` relative to ``delta`` at polar angle ``theta``."""
    a = abs(alpha) * np.sin(theta)
    root = np.sqrt(a**4 + 4 * a**2)
    return float((2 + a * a - root) / 2), float((2 + a * a + root) / 2)
