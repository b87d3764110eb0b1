"""Command-line interface.

Subcommands read a YAML run configuration (see :mod:`conegluing.config`) and
write grid dumps and CSV tables into the configured output directory.  Exit
codes: 0 success, 2 configuration error, 3 non-convergence, 4 numerical failure.
"""
from __future__ import annotations

import logging
import math
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import analysis_reports as ar
from . import inequality_lab as lab
from .config import FAMILIES, RunConfig, dump_config, load_config
from .domain_geometry import pullback_metric, uniform_equivalence_bounds
from .errors import ConfigError, ConvergenceError, GluingError, NumericalError
from .gluing_solver import GluingProblem, ansatz_mismatch, extend_by_zero, solve_gluing
from .interpolation import (MetricPair, doubling_schedule, scale_problem, translate_problem, unscale_metric,
                            untranslate_metric)
from .io import read_dump, write_dump
from .tensor_calculus import scalar_curvature
from .weights_cutoffs import CutoffProfile, WeightParams

log = logging.getLogger("conegluing")


def _outdir(cfg: RunConfig, override: str | None) -> Path:
    out = Path(override or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.yaml").write_text(dump_config(cfg))
    return out


# ---------------------------------------------------------------------------
# curvature


def run_curvature(cfg: RunConfig, out: Path, refine: bool = False) -> dict:
    grid = cfg.grid_spec()
    metric = cfg.metrics.g.build(grid.n)
    g = metric.sample(grid)
    R = scalar_curvature(g)
    write_dump(out / "curvature.dump", R, grid, "scalar")
    probes = ar.probe_lattice(grid, cfg.curvature.probe_points, margin=ar.HALO_MARGIN * grid.dx)
    row = {"metric": metric.describe()["name"], **ar.curvature_stats(R, grid, probes)}
    ar.write_csv(out / "curvature.csv", [row])
    result = {"stats": row}
    if refine:
        rows, order = ar.refinement_study(metric, grid.lower, grid.upper, cfg.curvature.refine,
                                          cfg.curvature.probe_points)
        for r in rows:
            r.update(order)
        ar.write_csv(out / "curvature_order.csv", rows)
        result["order"] = order
    return result


# ---------------------------------------------------------------------------
# glue


def _solve_with_ladder(cfg: RunConfig, pair: MetricPair, domain, w: WeightParams, allow_precondition: bool):
    pre = cfg.preconditioning
    if pre.translate is not None and allow_precondition:
        pair = translate_problem(pair, pre.translate)
    scales = list(doubling_schedule(pre.scale, pre.scale_cap)) if pre.auto_scale else [pre.scale]
    if not allow_precondition:
        scales = [1.0]
    last = None
    for lam in scales:
        p = scale_problem(pair, lam) if lam != 1 else pair
        problem = GluingProblem(p, domain, w, CutoffProfile(cfg.cutoff.lo, cfg.cutoff.hi), cfg.solver.r_in,
                                cfg.solver.r_out, cfg.solver.rho_min, cfg.solver.settings())
        try:
            return problem, lam, solve_gluing(problem)
        except ConvergenceError as exc:
            log.warning("scale %g: %s", lam, exc)
            last = exc
    raise ConvergenceError(
        f"no convergence up to the preconditioning cap (scales tried: {scales}); last failure: {last}",
        last.history if last else [],
    )


def _decay_rows(cfg: RunConfig, sol, domain, region: int) -> list[dict]:
    rep = cfg.report
    grid = sol.g_chi.grid
    rows = []
    direction = domain.bisector(1.0) - np.asarray(domain.apex)
    try:
        fit = ar.fit_decay(sol.h, grid, direction, tuple(rep.decay_window), rep.decay_samples, domain.apex)
        rows.append({"region": region, "fit": "radial", "window": tuple(rep.decay_window), "value": fit.exponent,
                     "stderr": fit.stderr, "samples": fit.samples,
                     "bound": -sol.problem.weights.beta - grid.n + 2, "error": ""})
    except ValueError as exc:
        rows.append({"region": region, "fit": "radial", "window": tuple(rep.decay_window), "value": math.nan,
                     "stderr": math.nan, "samples": 0, "bound": math.nan, "error": str(exc)})
    for shell in rep.boundary_shells:
        try:
            bf = ar.fit_boundary_decay(sol.h, domain, grid, shell, tuple(rep.boundary_ratio_window))
            rows.append({"region": region, "fit": f"boundary_r{shell:g}", "window": tuple(rep.boundary_ratio_window),
                         "value": bf.rate, "stderr": bf.stderr, "samples": bf.samples,
                         "bound": 2 * sol.problem.weights.s, "error": ""})
        except ValueError as exc:
            rows.append({"region": region, "fit": f"boundary_r{shell:g}", "window": tuple(rep.boundary_ratio_window),
                         "value": math.nan, "stderr": math.nan, "samples": 0, "bound": math.nan, "error": str(exc)})
    return rows


def run_glue(cfg: RunConfig, out: Path) -> dict:
    """Iterated gluing over the configured domains.

    Region ``k`` glues its ``ghat`` (default ``metrics.ghat``) into the metric
    produced by region ``k - 1`` (``metrics.g`` for the first).  With a
    diffeomorphism the problem is pulled back, solved on ``Omega`` and pushed
    forward at the end.
    """
    grid = cfg.grid_spec()
    n = grid.n
    w = cfg.weight_params(gluing=True)
    psi = cfg.diffeo.build()
    if psi.kind != "identity":
        try:
            psi.require_equivalence()
        except ValueError as exc:
            raise ConfigError(f"diffeo: {exc}") from None
    multi = len(cfg.domains) > 1
    pre = cfg.preconditioning
    if multi and (pre.translate is not None or pre.scale != 1 or pre.auto_scale):
        raise ConfigError("preconditioning: translation and scaling apply to single-region runs only")

    def gen(model):
        m = model.build(n)
        return m if psi.kind == "identity" else m.pulled_back(psi)

    current = None
    report_rows, summary_rows, decay_rows = [], [], []
    for k, dm in enumerate(cfg.domains):
        domain = dm.build()
        gh = gen(dm.ghat or cfg.metrics.ghat)
        if current is None:
            pair = MetricPair.from_generators(gen(cfg.metrics.g), gh, grid)
        else:
            pair = MetricPair(current, gh.sample(grid))
        t0 = time.perf_counter()
        problem, lam, sol = _solve_with_ladder(cfg, pair, domain, w, not multi)
        log.info("region %d solved in %.1f s (scale %g)", k, time.perf_counter() - t0, lam)
        glued, info = extend_by_zero(sol, strict=False)
        if lam != 1:
            glued = unscale_metric(glued, lam)
        if pre.translate is not None and not multi:
            glued = untranslate_metric(glued, pre.translate)
        current = glued
        for row in sol.report.rows:
            report_rows.append({"region": k, **row})
        summ = ar.residual_summary(sol)
        summary_rows.append({
            "region": k, "scale": lam, "converged": sol.report.converged,
            "initial_residual": sol.report.initial_residual, "final_residual": sol.report.final_residual,
            "iterations": len(sol.report.rows) - 1, **summ,
            "ansatz_mismatch": ansatz_mismatch(sol) if sol.operator is not None else 0.0,
            "extension_ok": info["ok"],
        })
        decay_rows.extend(_decay_rows(cfg, sol, domain, k))
        write_dump(out / f"region{k}_h.dump", sol.h, sol.g_chi.grid, "tensor")
    if psi.kind != "identity":
        current = pullback_metric(psi.inverse(), current)
    write_dump(out / "glued.dump", current)
    ar.write_csv(out / "solve_report.csv", report_rows)
    ar.write_csv(out / "summary.csv", summary_rows)
    ar.write_csv(out / "decay.csv", decay_rows)
    if cfg.report.adm_radii:
        adm_rows = []
        for rs in cfg.report.adm_radii:
            res = ar.adm_mass(current, rs, weights=w)
            adm_rows.append({"r_sphere": rs, "mass": res.mass, "well_defined": res.well_defined})
        ar.write_csv(out / "adm.csv", adm_rows)
    return {"glued": current, "summary": summary_rows, "decay": decay_rows}


# ---------------------------------------------------------------------------
# pullback


def run_pullback(cfg: RunConfig, out: Path, source: str | None = None) -> dict:
    if source is not None:
        kind, _, g = read_dump(source)
        if kind != "metric":
            raise ConfigError(f"{source}: expected a metric dump, found {kind!r}")
    else:
        grid = cfg.grid_spec()
        g = cfg.metrics.g.build(grid.n).sample(grid)
    psi = cfg.diffeo.build()
    pulled, valid = pullback_metric(psi, g, return_mask=True)
    write_dump(out / "pullback.dump", pulled)
    mask = valid & g.grid.interior_mask(1)
    lo, hi = uniform_equivalence_bounds(pulled, g, mask)
    a = abs(psi.alpha)
    row = {"kind": psi.kind, "alpha": psi.alpha, "lambda_min": lo, "lambda_max": hi,
           "bracket_lo": 1 - a if psi.kind != "identity" else 1.0, "bracket_hi": 3.0 if psi.kind != "identity" else 1.0,
           "valid_fraction": float(valid.mean())}
    ar.write_csv(out / "pullback_bounds.csv", [row])
    return row


# ---------------------------------------------------------------------------
# verify-poincare


def _weights_for_lab(cfg: RunConfig) -> WeightParams:
    return cfg.weight_params(gluing=False)


def run_poincare(cfg: RunConfig, out: Path, family: str | None = None) -> dict:
    pc = cfg.poincare
    fam = family or pc.family
    domain = cfg.domains[0].build()
    w = _weights_for_lab(cfg)
    rows, summary = [], []
    if fam in ("identity", "polynomial", "exponential", "transported"):
        fields = lab.random_test_fields(domain, pc.samples, cfg.seed)
    if fam == "identity":
        for i, f in enumerate(fields):
            r = lab.master_identity_shell(f, domain, w.sigma, w.mu, pc.nu, pc.nodes[0])
            rows.append({"field": i, "seed": cfg.seed, "region": f.region, "lhs": r.lhs, "rhs": r.rhs,
                         "slack": r.slack, "oracle": r.params["oracle"], "scale": r.params["scale"]})
        worst = min(row["slack"] / row["scale"] for row in rows)
        summary.append({"family": fam, "samples": len(rows), "min_relative_slack": worst, "ok": worst >= -1e-10})
    elif fam in ("polynomial", "exponential"):
        sups = {}
        for nodes in pc.nodes:
            vals = []
            for i, f in enumerate(fields):
                r = lab.full_poincare_check(f, w, domain, pc.x0, pc.R, fam, nodes)
                vals.append(r.constant)
                rows.append({"field": i, "seed": cfg.seed, "nodes": nodes, "region": f.region, "lhs": r.lhs,
                             "sphere": r.params["sphere"], "ball": r.params["ball"], "grad": r.params["grad"],
                             "constant": r.constant})
            sups[nodes] = max(vals)
        first, last = sups[pc.nodes[0]], sups[pc.nodes[-1]]
        change = abs(last - first) / abs(last) if last else math.inf
        for nodes, s in sups.items():
            summary.append({"family": fam, "nodes": nodes, "samples": pc.samples, "sup_constant": s,
                            "relative_change": change, "finite": math.isfinite(s)})
    elif fam == "hardy":
        for sigma in pc.sigmas:
            r = lab.hardy_constant(sigma, pc.hardy_points)
            ref = r.params["reference_statement"]
            rows.append({"case": "hardy", "sigma": sigma, "log_span": 40.0, "constant": r.constant,
                         "reference_statement": ref, "reference_proof": r.params["reference_proof"],
                         "relative_error": (r.constant - ref) / ref if ref else math.nan})
        for span in (10.0, 20.0, 40.0):
            r = lab.hardy_constant(-0.5, pc.hardy_points, span)
            rows.append({"case": "degenerate", "sigma": -0.5, "log_span": span, "constant": r.constant,
                         "reference_statement": 0.0, "reference_proof": 1.0, "relative_error": math.nan})
        consts = {}
        for s in pc.s_values:
            r = lab.exponential_constant(s, w.sigma, pc.collar, pc.hardy_points)
            consts[s] = r.constant
            rows.append({"case": "exponential", "sigma": w.sigma, "s": s, "collar": pc.collar, "constant": r.constant})
        if len(consts) >= 2:
            s1, s2 = sorted(consts)[:2]
            summary.append({"family": "exponential_1d", "s_low": s1, "s_high": s2,
                            "ratio": consts[s2] / consts[s1], "expected": (s2 / s1) ** 2})
        for row in rows:
            if row["case"] == "hardy":
                summary.append({"family": "hardy", "sigma": row["sigma"], "constant": row["constant"],
                                "reference": row["reference_statement"], "relative_error": row["relative_error"]})
    elif fam == "halfray":
        q, R = pc.q, pc.R
        # the second case peaks at R, so the boundary term is active
        cases = [("bump_2R_4R", lab.Bump1D(2 * R, 4 * R)), ("peak_at_R", lab.Bump1D(0.0, 2 * R)),
                 ("wide", lab.Bump1D(1.5 * R, 20 * R))]
        for name, b in cases:
            r = lab.halfray_inequality(q, R, b, b.deriv, (max(b.lo, R), b.hi))
            rows.append({"case": name, "q": q, "R": R, "lhs": r.lhs, "rhs": r.rhs, "boundary": r.boundary,
                         "C1": r.params["C1"], "C2": r.params["C2"], "min_C2": r.constant, "slack": r.slack})
        summary.append({"family": fam, "min_slack": min(row["slack"] for row in rows)})
    elif fam == "transported":
        psi = cfg.diffeo.build()
        if psi.kind == "identity":
            psi = type(psi)("log_rotation", 0.5, psi.axis)
        for i, f in enumerate(fields):
            r = lab.transported_check(psi, f, w, domain, pc.x0, pc.R, "polynomial", pc.nodes[0])
            rows.append({"field": i, "seed": cfg.seed, "alpha": psi.alpha, "constant": r.constant,
                         "base_constant": r.params["base_constant"], "bound": r.params["bound"], "slack": r.slack})
        summary.append({"family": fam, "alpha": psi.alpha, "samples": len(rows),
                        "max_inflation": max(row["constant"] / row["base_constant"] for row in rows),
                        "min_slack": min(row["slack"] for row in rows)})
    else:
        raise ConfigError(f"unknown family {fam!r}")
    ar.write_csv(out / f"poincare_{fam}.csv", rows)
    ar.write_csv(out / f"poincare_{fam}_summary.csv", summary)
    return {"rows": rows, "summary": summary}


# ---------------------------------------------------------------------------
# report


def run_report(run_dir: Path) -> str:
    """Plain-text digest of every CSV in a run directory (written to ``report.txt``)."""
    import csv

    lines = [f"run directory: {run_dir}"]
    for path in sorted(run_dir.glob("*.csv")):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        lines.append("")
        lines.append(f"[{path.name}] {len(rows)} rows")
        if not rows:
            continue
        show = rows if len(rows) <= 8 else rows[:3] + rows[-3:]
        cols = list(rows[0].keys())
        lines.append("  " + ", ".join(cols))
        for row in show:
            lines.append("  " + ", ".join(row[c] for c in cols))
        if len(rows) > 8:
            lines.append(f"  ... ({len(rows) - 6} rows omitted)")
    for path in sorted(run_dir.glob("*.dump")):
        head = path.read_bytes()[:400].split(b"end_header")[0].decode("ascii", "replace").splitlines()
        info = {ln.split(" ", 1)[0]: ln.split(" ", 1)[-1] for ln in head[1:]}
        lines.append(f"[{path.name}] kind={info.get('kind')} shape={info.get('shape')}")
    text = "\n".join(lines) + "\n"
    (run_dir / "report.txt").write_text(text)
    return text


# ---------------------------------------------------------------------------
# click wiring


def _run(fn):
    try:
        return fn()
    except GluingError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except (ValueError, TypeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(ConfigError.exit_code)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(NumericalError.exit_code)


config_arg = click.argument("config", type=click.Path(dir_okay=False))
output_opt = click.option("--output", "-o", default=None, help="Output directory (overrides the config).")


@click.group()
@click.option("--verbose", "-v", count=True, help="Repeat for more log output.")
@click.version_option(package_name="artifact")
def main(verbose: int):
    """Scalar-curvature gluing and weighted-inequality checks."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@main.command()
@config_arg
@output_opt
@click.option("--refine/--no-refine", default=False, help="Run the refinement sweep and fit the order.")
def curvature(config, output, refine):
    """Scalar curvature of metrics.g on the grid, with statistics."""
    def go():
        cfg = load_config(config)
        res = run_curvature(cfg, _outdir(cfg, output), refine)
        click.echo(f"max|R| = {res['stats']['max_abs_R']:.3e}")
        if "order" in res:
            click.echo(f"order = {res['order']['order']:.3f} +- {res['order']['stderr']:.3f}")
    _run(go)


@main.command()
@config_arg
@output_opt
def glue(config, output):
    """Glue metrics.ghat into metrics.g across each configured domain."""
    def go():
        cfg = load_config(config)
        res = run_glue(cfg, _outdir(cfg, output))
        for row in res["summary"]:
            click.echo(f"region {row['region']}: residual {row['initial_residual']:.3e} -> "
                       f"{row['final_residual']:.3e} in {row['iterations']} iterations")
    _run(go)


@main.command()
@config_arg
@output_opt
@click.option("--input", "source", default=None, type=click.Path(dir_okay=False),
              help="Metric dump to pull back instead of metrics.g.")
def pullback(config, output, source):
    """Pull a metric back by the configured diffeomorphism."""
    def go():
        cfg = load_config(config)
        row = run_pullback(cfg, _outdir(cfg, output), source)
        click.echo(f"equivalence bounds [{row['lambda_min']:.6g}, {row['lambda_max']:.6g}]")
    _run(go)


@main.command("verify-poincare")
@config_arg
@output_opt
@click.option("--family", type=click.Choice(FAMILIES), default=None)
@click.option("--samples", type=int, default=None, help="Number of random test fields.")
@click.option("--seed", type=int, default=None)
def verify_poincare(config, output, family, samples, seed):
    """Sample the weighted Poincare / Hardy inequalities."""
    def go():
        cfg = load_config(config)
        upd = {}
        if samples is not None:
            upd["poincare"] = cfg.poincare.model_copy(update={"samples": samples})
        if seed is not None:
            upd["seed"] = seed
        if family is not None:
            upd["poincare"] = upd.get("poincare", cfg.poincare).model_copy(update={"family": family})
        if upd:
            cfg = RunConfig.model_validate({**cfg.model_dump(), **{k: (v.model_dump() if hasattr(v, "model_dump")
                                                                       else v) for k, v in upd.items()}})
        res = run_poincare(cfg, _outdir(cfg, output))
        for row in res["summary"]:
            click.echo(", ".join(f"{k}={ar.format_value(v)}" for k, v in row.items()))
    _run(go)


@main.command()
@click.argument("run_dir", type=click.Path(file_okay=False, exists=True))
def report(run_dir):
    """Summarise the CSV tables and dumps of a run directory."""
    _run(lambda: click.echo(run_report(Path(run_dir)), nl=False))


if __name__ == "__main__":
    main()
