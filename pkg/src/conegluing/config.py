"""Run configuration: a versioned YAML document validated by pydantic models.

Unknown keys are errors, so a misspelt exponent name cannot be silently
ignored.  Validation errors are reported with the line of the offending key.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .domain_geometry import DiffeoSpec, DomainSpec
from .errors import ConfigError
from .gluing_solver import SolverSettings
from .grid import GridSpec
from .metrics import GENERATORS, make_metric
from .weights_cutoffs import CutoffProfile, WeightParams

SCHEMA_VERSION = 1


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridModel(Strict):
    lower: list[float]
    upper: list[float]
    points: int | list[int]

    def build(self) -> GridSpec:
        pts = self.points if isinstance(self.points, list) else [self.points] * len(self.lower)
        return GridSpec(tuple(self.lower), tuple(self.upper), tuple(pts))

    @model_validator(mode="after")
    def _check(self):
        GridModel.build(self)
        return self


class MetricModel(Strict):
    name: str
    mass: Optional[float] = None
    amplitude: Optional[float] = None
    center: Optional[list[float]] = None
    width: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if self.name not in GENERATORS:
            raise ValueError(f"unknown metric generator {self.name!r}; choose from {sorted(GENERATORS)}")
        return self

    def build(self, n: int = 3):
        params = {k: v for k, v in self.model_dump().items() if k != "name" and v is not None}
        if "center" in params:
            params["center"] = np.asarray(params["center"], dtype=float)
        try:
            return make_metric(self.name, n=n, **params)
        except TypeError as exc:
            raise ConfigError(f"metric {self.name!r}: {exc}") from None


class MetricsModel(Strict):
    g: MetricModel = Field(default_factory=lambda: MetricModel(name="flat"))
    ghat: MetricModel = Field(default_factory=lambda: MetricModel(name="flat"))


class DomainModel(Strict):
    kind: Literal["cone_shell", "generic"] = "cone_shell"
    theta1: float = math.pi / 6
    theta2: float = math.pi / 3
    axis: list[float] = [0.0, 0.0, 1.0]
    apex: list[float] = [0.0, 0.0, 0.0]
    R0: float = 1.0
    collar: float = 0.1
    half_width: float = 0.3
    ghat: Optional[MetricModel] = None

    @model_validator(mode="after")
    def _check(self):
        DomainModel.build(self)
        return self

    def build(self) -> DomainSpec:
        return DomainSpec(self.kind, self.theta1, self.theta2, tuple(self.axis), tuple(self.apex), self.R0,
                          self.collar, self.half_width)


class DiffeoModel(Strict):
    kind: Literal["identity", "log_rotation", "regularized"] = "identity"
    alpha: float = 0.0
    axis: list[float] = [0.0, 0.0, 1.0]

    def build(self) -> DiffeoSpec:
        return DiffeoSpec(self.kind, self.alpha, tuple(self.axis))


class WeightsModel(Strict):
    beta: float = -0.5
    sigma: float = 0.0
    s: float = 1.0
    k: int = 2
    eps: float = 0.25
    beta_tilde: float = -1.0

    def build(self, n: int = 3) -> WeightParams:
        return WeightParams(n, self.beta, self.sigma, self.s, self.k, self.eps, self.beta_tilde)


class CutoffModel(Strict):
    lo: float = 1 / 3
    hi: float = 2 / 3

    @model_validator(mode="after")
    def _check(self):
        CutoffProfile(self.lo, self.hi)
        return self


class SolverModel(Strict):
    r_in: float = 8.0
    r_out: float = 32.0
    rho_min: float = 0.05
    linear_tol: float = 1e-8
    nonlinear_tol: float = 1e-6
    max_iterations: int = 50
    max_linear_iterations: int = 20000
    mode: Literal["picard-frozen", "full-newton"] = "picard-frozen"
    preconditioner: Literal["jacobi", "amg", "none"] = "jacobi"
    divergence_window: int = 3

    @model_validator(mode="after")
    def _check(self):
        SolverModel.settings(self)
        if not 0 < self.r_in < self.r_out:
            raise ValueError("need 0 < r_in < r_out")
        if not self.rho_min > 0:
            raise ValueError("rho_min must be positive")
        return self

    def settings(self) -> SolverSettings:
        return SolverSettings(self.linear_tol, self.nonlinear_tol, self.max_iterations, self.max_linear_iterations,
                              self.mode, self.preconditioner, self.divergence_window)


class PreconditioningModel(Strict):
    translate: Optional[list[float]] = None
    scale: float = 1.0
    auto_scale: bool = False
    scale_cap: float = 16.0

    @model_validator(mode="after")
    def _check(self):
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.scale_cap < self.scale:
            raise ValueError("scale_cap must be >= scale")
        return self


class CurvatureModel(Strict):
    refine: list[int] = [32, 48, 64]
    probe_points: int = 24

    @model_validator(mode="after")
    def _check(self):
        if len(self.refine) < 2 or any(p < 5 for p in self.refine):
            raise ValueError("refine needs at least two resolutions of >= 5 points")
        return self


FAMILIES = ("identity", "polynomial", "exponential", "hardy", "halfray", "transported")


class PoincareModel(Strict):
    family: Literal["identity", "polynomial", "exponential", "hardy", "halfray", "transported"] = "polynomial"
    samples: int = 500
    nodes: list[int] = [48, 64]
    x0: float = 0.5
    R: float = 4.0
    sigmas: list[float] = [-1.0, 0.0, 1.0]
    s_values: list[float] = [1.0, 2.0]
    hardy_points: int = 10_000
    collar: float = 0.1
    nu: float = 0.0
    q: float = 3.0

    @model_validator(mode="after")
    def _check(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not self.nodes or any(k < 4 for k in self.nodes):
            raise ValueError("nodes must list quadrature orders >= 4")
        if self.family == "hardy" and any(s == -0.5 for s in self.sigmas):
            raise ValueError("sigma = -1/2 is excluded from the Hardy family")
        if self.family == "exponential" and any(s <= 0 for s in self.s_values):
            raise ValueError("the exponential family needs s > 0")
        if self.family == "halfray" and self.q == 0:
            raise ValueError("the half-ray inequality needs q = 2 mu + 2 sigma + n != 0")
        if not (self.x0 > 0 and self.R > 0):
            raise ValueError("x0 and R must be positive")
        return self


class ReportModel(Strict):
    decay_window: list[float] = [16.0, 24.0]
    decay_samples: int = 24
    boundary_shells: list[float] = [12.0, 16.0, 20.0, 24.0]
    boundary_ratio_window: list[float] = [0.05, 0.12]
    adm_radii: list[float] = []

    @model_validator(mode="after")
    def _check(self):
        if len(self.decay_window) != 2 or not 0 < self.decay_window[0] < self.decay_window[1]:
            raise ValueError("decay_window must be [lo, hi] with 0 < lo < hi")
        if self.decay_samples < 8:
            raise ValueError("decay fits need at least 8 samples")
        return self


class RunConfig(Strict):
    schema_version: Literal[1]
    seed: int = 0
    output: str = "run"
    grid: Optional[GridModel] = None
    metrics: MetricsModel = Field(default_factory=MetricsModel)
    domains: list[DomainModel] = Field(default_factory=lambda: [DomainModel()])
    diffeo: DiffeoModel = Field(default_factory=DiffeoModel)
    weights: WeightsModel = Field(default_factory=WeightsModel)
    cutoff: CutoffModel = Field(default_factory=CutoffModel)
    solver: SolverModel = Field(default_factory=SolverModel)
    preconditioning: PreconditioningModel = Field(default_factory=PreconditioningModel)
    curvature: CurvatureModel = Field(default_factory=CurvatureModel)
    poincare: PoincareModel = Field(default_factory=PoincareModel)
    report: ReportModel = Field(default_factory=ReportModel)

    @model_validator(mode="after")
    def _cross(self):
        n = len(self.grid.lower) if self.grid is not None else 3
        w = self.weights.build(n)
        fam = self.poincare.family
        if fam == "polynomial" and w.sigma == -0.5:
            raise ValueError("@weights.sigma: sigma = -1/2 is excluded for the polynomial Poincare family")
        if fam == "exponential" and w.s == 0:
            raise ValueError("@weights.s: s must be nonzero for the exponential Poincare family")
        if fam in ("polynomial", "exponential", "transported") and w.sigma + w.mu + n / 2 == 0:
            raise ValueError("@weights.beta: sigma + mu + n/2 = sigma - beta must be nonzero")
        if not self.domains:
            raise ValueError("@domains: at least one domain is required")
        if len(self.domains) > 1:
            specs = [d.build() for d in self.domains]
            overlap = domains_overlap(specs, self.seed)
            if overlap is not None:
                raise ValueError(f"@domains.{overlap[1]}: domains {overlap[0]} and {overlap[1]} intersect")
        return self

    # -- builders ------------------------------------------------------------

    def grid_spec(self) -> GridSpec:
        if self.grid is None:
            raise ConfigError("this command needs a 'grid' section")
        return self.grid.build()

    def weight_params(self, gluing: bool = False) -> WeightParams:
        n = len(self.grid.lower) if self.grid is not None else 3
        w = self.weights.build(n)
        try:
            return w.validate(gluing)
        except ValueError as exc:
            raise ConfigError(f"weights: {exc}") from None


def domains_overlap(specs, seed: int = 0, samples: int = 20_000):
    """First pair of domains sharing a sampled point, or ``None``.

    Cone shells are scale invariant, so directions on the unit sphere (scaled to
    radius ``10 R0``) suffice.
    """
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(3, samples))
    d /= np.linalg.norm(d, axis=0)
    rad = 10 * max(s.R0 for s in specs)
    inside = [s.contains(d * rad + np.asarray(s.apex)[:, None]) for s in specs]
    for i in range(len(specs)):
        for j in range(i + 1, len(specs)):
            if np.any(inside[i] & inside[j]):
                return i, j
    return None


def _node_line(node, loc) -> int | None:
    """Line (1-based) of the YAML node addressed by a pydantic error location."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    line, nxt = k.start_mark.line + 1, v
                    break
            if nxt is None:
                return line
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}{where}: malformed YAML: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    if data.get("schema_version") not in (None, SCHEMA_VERSION):
        raise ConfigError(f"{source}: unsupported schema_version {data.get('schema_version')!r}; "
                          f"this build reads version {SCHEMA_VERSION}")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = [p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-"))]
            msg = err["msg"].removeprefix("Value error, ")
            if msg.startswith("@"):
                # cross-field check naming its own location
                where, msg = msg[1:].split(": ", 1)
                loc = [int(k) if k.isdigit() else k for k in where.split(".")]
            ln = _node_line(node, loc)
            path = ".".join(str(p) for p in loc) or "<root>"
            lines.append(f"{source}:{ln if ln is not None else '?'}: {path}: {msg}")
        raise ConfigError("\n".join(lines)) from None


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config(text, str(p))


def dump_config(cfg: RunConfig) -> str:
    """Resolved configuration as YAML (all defaults filled in, keys sorted)."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True)
