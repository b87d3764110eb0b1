"""Post-solve diagnostics: radial and boundary decay fits, the ADM mass surface
integral and CSV output.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from scipy.special import gamma

from .grid import GridSpec, d1, interpolate
from .tensor_calculus import MetricField

MIN_SAMPLES = 8
# probe lattice margin, in coarsest-grid cells
HALO_MARGIN = 2


class AdmWarning(UserWarning):
    """The decay needed for a well-defined ADM energy is not guaranteed."""


@dataclass
class RayProfile:
    r: np.ndarray
    values: np.ndarray
    origin: tuple
    direction: tuple

    def __post_init__(self):
        if np.any(np.diff(self.r) <= 0):
            raise ValueError("ray samples must have strictly increasing r")


@dataclass
class DecayFit:
    exponent: float
    stderr: float
    amplitude: float
    samples: int
    window: tuple

    def to_dict(self) -> dict:
        return asdict(self)


def tensor_magnitude(h: np.ndarray, n: int) -> np.ndarray:
    """Pointwise Frobenius norm of a field with ``k`` leading component axes."""
    lead = h.ndim - n
    if lead == 0:
        return np.abs(h)
    return np.sqrt(np.sum(h**2, axis=tuple(range(lead))))


def ray_profile(field: np.ndarray, grid: GridSpec, direction, window, samples: int = 24, origin=None) -> RayProfile:
    """Sample ``|field|`` along ``origin + r * direction`` for ``r`` in ``window`` (log-spaced)."""
    n = grid.n
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    origin = np.zeros(n) if origin is None else np.asarray(origin, dtype=float)
    lo, hi = window
    if not 0 < lo < hi:
        raise ValueError("window must satisfy 0 < lo < hi")
    if samples < MIN_SAMPLES:
        raise ValueError(f"a decay fit needs at least {MIN_SAMPLES} samples")
    r = np.geomspace(lo, hi, samples)
    pts = origin[:, None] + direction[:, None] * r[None]
    vals = interpolate(tensor_magnitude(field, n), grid, pts)
    return RayProfile(r, vals, tuple(origin), tuple(direction))


def _regress(xv, yv, window):
    res = stats.linregress(xv, yv)
    return res.slope, res.stderr, res.intercept


def fit_decay(field: np.ndarray | RayProfile, grid: GridSpec | None = None, direction=None,
              window=(8.0, 16.0), samples: int = 24, origin=None) -> DecayFit:
    """Least-squares slope of ``log|field|`` against ``log r`` along a ray."""
    prof = field if isinstance(field, RayProfile) else ray_profile(field, grid, direction, window, samples, origin)
    v = prof.values
    if np.any(~np.isfinite(v)):
        raise ValueError("ray leaves the grid inside the fit window")
    if np.any(v <= 0):
        raise ValueError("field vanishes or underflows on the fit window")
    slope, err, icpt = _regress(np.log(prof.r), np.log(v), window)
    return DecayFit(float(slope), float(err), float(math.exp(icpt)), int(v.size), (float(prof.r[0]), float(prof.r[-1])))


@dataclass
class BoundaryFit:
    rate: float
    stderr: float
    samples: int
    r_shell: float
    ratio_window: tuple

    def to_dict(self) -> dict:
        return asdict(self)


def fit_boundary_decay(h: np.ndarray, domain, grid: GridSpec, r_shell: float, ratio_window=(0.05, 0.12),
                       shell_width: float | None = None, mask=None, side: str = "both") -> BoundaryFit:
    """Regress ``log|h|`` on ``r/x`` over grid points of the shell ``|r - r_shell| <= width/2``.

    Only points with ``x/r`` in ``ratio_window`` and ``h != 0`` enter (masked collar
    cells carry exact zeros and are excluded).  Returns ``s_hat = -slope``.
    ``side`` restricts to the half of the shell near component A, B or both.
    """
    pts = grid.coords
    width = grid.dx if shell_width is None else shell_width
    inside = domain.contains(pts)
    x = np.where(inside, domain.defining_function(pts, clip=True), 0.0)
    r = domain.radius_function(pts)
    mag = tensor_magnitude(h, grid.n)
    sel = inside & (np.abs(r - r_shell) <= width / 2) & (mag > 0) & grid.interior_mask(1)
    ratio = np.where(r > 0, x / r, 0.0)
    sel &= (ratio >= ratio_window[0]) & (ratio <= ratio_window[1])
    if side != "both":
        tau = domain.transverse_coordinate(pts)
        sel &= (tau < 0.5) if side == "A" else (tau >= 0.5)
    if mask is not None:
        sel &= mask
    if sel.sum() < MIN_SAMPLES:
        raise ValueError(f"only {int(sel.sum())} unmasked samples on the shell; need {MIN_SAMPLES}")
    slope, err, _ = _regress(r[sel] / x[sel], np.log(mag[sel]), ratio_window)
    return BoundaryFit(float(-slope), float(err), int(sel.sum()), float(r_shell), tuple(ratio_window))


# ---------------------------------------------------------------------------
# ADM mass


def sphere_area(n: int) -> float:
    """Area of the unit sphere ``S^{n-1}``."""
    return 2 * math.pi ** (n / 2) / gamma(n / 2)


def _sphere_quadrature(order: int):
    """Gauss-Legendre in ``cos theta`` times the trapezoid rule in ``phi`` on ``S^2``."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    phi = np.arange(2 * order) * math.pi / order
    ct, ph = np.meshgrid(xg, phi, indexing="ij")
    st = np.sqrt(1 - ct**2)
    nrm = np.stack([st * np.cos(ph), st * np.sin(ph), ct])
    w = np.repeat(wg[:, None], 2 * order, axis=1) * (math.pi / order)
    return nrm.reshape(3, -1), w.ravel()


@dataclass
class AdmResult:
    mass: float
    r_sphere: float
    well_defined: bool
    warning: str

    def to_dict(self) -> dict:
        return asdict(self)


def adm_mass(g: MetricField, r_sphere: float, center=None, weights=None, order: int = 48) -> AdmResult:
    """``(1 / (2 (n-1) omega)) oint (d_j g_ij - d_i g_jj) dS^i`` on the coordinate sphere.

    Derivatives use the grid stencils and are interpolated to the quadrature
    nodes.  With ``weights`` whose ``beta`` is below ``-(n-2)/2`` the decay of the
    glued metric does not guarantee a limit; the value is returned with an
    :class:`AdmWarning`.
    """
    grid = g.grid
    n = grid.n
    if n != 3:
        raise NotImplementedError("ADM quadrature implemented for n = 3")
    c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    nrm, w = _sphere_quadrature(order)
    pts = c[:, None] + r_sphere * nrm
    comp = g.components
    integrand = np.zeros(nrm.shape[1])
    for i in range(n):
        acc = np.zeros(grid.shape)
        for j in range(n):
            acc += d1(comp[i, j], grid, j) - d1(comp[j, j], grid, i)
        vals = interpolate(acc, grid, pts)
        integrand += vals * nrm[i]
    if np.any(~np.isfinite(integrand)):
        raise ValueError(f"sphere of radius {r_sphere} is not inside the grid interior")
    total = float(np.sum(integrand * w)) * r_sphere ** (n - 1)
    mass = total / (2 * (n - 1) * sphere_area(n))
    ok, msg = True, ""
    if weights is not None and not weights.adm_compatible:
        ok = False
        msg = (f"beta = {weights.beta} < -(n-2)/2 = {-(n - 2) / 2}: decay o(r^-(n-2)/2) not guaranteed, "
               "mass not well defined")
        warnings.warn(msg, AdmWarning, stacklevel=2)
    return AdmResult(mass, float(r_sphere), ok, msg)


# ---------------------------------------------------------------------------
# CSV


def format_value(v) -> str:
    """Stable text form: floats with 17 significant digits, everything else via str."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else str(float(v))
    if isinstance(v, (list, tuple)):
        return " ".join(format_value(x) for x in v)
    return str(v)


def to_csv(rows: list[dict], columns=None) -> str:
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    for row in rows:
        wr.writerow([format_value(row.get(c, "")) for c in columns])
    return buf.getvalue()


def write_csv(path, rows: list[dict], columns=None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(to_csv(rows, columns))


def residual_summary(sol) -> dict:
    """Residual localisation and extension diagnostics of a :class:`GluingSolution`."""
    from .gluing_solver import fringe

    lay = sol.layout
    res = sol.residual()
    vol = sol.g_chi.grid.cell_volume
    inner = sol.g_chi.grid.interior_mask(1)
    mass_all = float(np.sum(np.abs(res[inner]))) * vol
    mass_unmasked = float(np.sum(np.abs(res[inner & lay.hmask]))) * vol
    collar = lay.masked_collar & inner
    fr = fringe(lay)
    return {
        "residual_l1": mass_all,
        "unmasked_fraction": mass_unmasked / mass_all if mass_all > 0 else 1.0,
        "collar_max_residual": float(np.abs(res[collar]).max()) if collar.any() else 0.0,
        "collar_max_h": float(np.abs(sol.h[..., collar]).max()) if collar.any() else 0.0,
        "fringe_max_h": float(np.abs(sol.h[..., fr]).max()) if fr.any() else 0.0,
        "active_max_residual": float(np.abs(res[lay.active]).max()),
        "min_eigenvalue": float(sol.glued.eigenvalues()[0].min()),
    }


# ---------------------------------------------------------------------------
# curvature convergence


def probe_lattice(grid: GridSpec, points: int = 24, margin: float | None = None) -> np.ndarray:
    """Fixed sample lattice inside the box, independent of the resolution.

    Comparing resolutions at moving grid points mixes the truncation error with
    the variation of the field, so the order estimate uses these probes.
    """
    m = 0.3 if margin is None else margin
    axes = [np.linspace(lo + m, hi - m, points) for lo, hi in zip(grid.lower, grid.upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij")).reshape(grid.n, -1)


def curvature_stats(R: np.ndarray, grid: GridSpec, probes: np.ndarray | None = None) -> dict:
    inner = grid.interior_mask()
    vals = R[inner]
    out = {
        "points": grid.shape[0],
        "dx": grid.dx,
        "max_abs_R": float(np.abs(vals).max()),
        "rms_R": float(np.sqrt(np.mean(vals**2))),
    }
    if probes is not None:
        pv = interpolate(R, grid, probes)
        out["probe_max_abs_R"] = float(np.nanmax(np.abs(pv)))
    return out


def refinement_study(metric, lower, upper, resolutions, probe_points: int = 24) -> tuple[list[dict], dict]:
    """``max|R|`` on a fixed probe lattice for several resolutions, and the fitted order.

    Returns per-resolution rows and ``{"order", "stderr"}`` from the regression of
    ``log max|R|`` on ``log dx``.
    """
    from .tensor_calculus import scalar_curvature

    coarse = GridSpec(tuple(lower), tuple(upper), (min(resolutions),) * len(lower))
    probes = probe_lattice(coarse, probe_points, margin=HALO_MARGIN * coarse.dx)
    rows = []
    for pts in resolutions:
        grid = GridSpec(tuple(lower), tuple(upper), (pts,) * len(lower))
        R = scalar_curvature(metric.sample(grid))
        rows.append(curvature_stats(R, grid, probes))
    if any(r["probe_max_abs_R"] == 0 for r in rows):
        # exact zeros (a flat metric) leave no order to fit
        return rows, {"order": float("nan"), "stderr": float("nan")}
    dx = np.log([r["dx"] for r in rows])
    err = np.log([r["probe_max_abs_R"] for r in rows])
    if len(rows) >= 3:
        res = stats.linregress(dx, err)
        order = {"order": float(res.slope), "stderr": float(res.stderr)}
    else:
        order = {"order": float((err[-1] - err[0]) / (dx[-1] - dx[0])), "stderr": float("nan")}
    return rows, order

