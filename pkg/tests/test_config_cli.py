import csv

import numpy as np
import pytest
from click.testing import CliRunner

from conegluing.cli import main
from conegluing.config import dump_config, load_config, parse_config
from conegluing.errors import ConfigError
from conegluing.grid import GridSpec
from conegluing.io import dumps, read_dump, write_dump
from conegluing.metrics import Schwarzschild

BUMP = "{name: bump, amplitude: 1.0e-3, center: [8.485281374238571, 0, 8.485281374238571], width: 3.0}"
SMALL = f"""schema_version: 1
seed: 3
grid: {{lower: [3, -7, 4], upper: [29, 7, 28], points: 24}}
metrics:
  g: {{name: flat}}
  ghat: {BUMP}
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_unknown_key_reports_line(tmp_path):
    path = write(tmp_path, "schema_version: 1\nweights: {sigmma: 0}\n", "bad.yaml")
    with pytest.raises(ConfigError, match=r"bad.yaml:2: weights.sigmma: Extra inputs are not permitted"):
        load_config(path)
    res = invoke("glue", path)
    assert res.exit_code == 2
    assert "bad.yaml:2" in res.output


def test_malformed_yaml_and_schema_version():
    with pytest.raises(ConfigError, match="malformed YAML"):
        parse_config("schema_version: 1\ngrid: {points: [4, 4\n")
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config("schema_version: 7\n")
    with pytest.raises(ConfigError, match="mapping"):
        parse_config("- 1\n- 2\n")


@pytest.mark.parametrize("snippet, message", [
    ("solver: {r_in: 5, r_out: 3}", "r_in"),
    ("poincare: {family: polynomial}\nweights: {sigma: -0.5}", "sigma"),
    ("poincare: {family: exponential}\nweights: {s: 0}", "s must be nonzero"),
    ("poincare: {family: exponential}\nweights: {beta: -0.25, sigma: -0.25}", "sigma - beta"),
    ("metrics: {g: {name: kerr}}", "unknown metric generator"),
    ("domains: []", "at least one domain"),
    ("preconditioning: {scale: 0.5}", "scale must be >= 1"),
])
def test_degenerate_configs_rejected(snippet, message):
    with pytest.raises(ConfigError, match=message):
        parse_config("schema_version: 1\n" + snippet + "\n")


def test_overlapping_domains_rejected():
    with pytest.raises(ConfigError, match="intersect"):
        parse_config("schema_version: 1\ndomains: [{}, {axis: [0, 0.1, 1]}]\n")


def test_config_round_trip():
    cfg = parse_config(SMALL)
    again = parse_config(dump_config(cfg))
    assert again == cfg


def test_dump_round_trip_and_checksum(tmp_path):
    grid = GridSpec((1.0, 1.0, 1.0), (3.0, 4.0, 5.0), (5, 6, 7))
    g = Schwarzschild(1.0).sample(grid)
    path = tmp_path / "g.dump"
    write_dump(path, g)
    kind, grid2, back = read_dump(path)
    assert kind == "metric" and grid2 == grid
    assert np.array_equal(back.components, g.components)
    assert path.read_bytes() == dumps(g.components, grid, "metric")
    raw = bytearray(path.read_bytes())
    raw[-3] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(ConfigError, match="checksum"):
        read_dump(path)
    (tmp_path / "junk.dump").write_bytes(b"hello")
    with pytest.raises(ConfigError, match="not a grid dump"):
        read_dump(tmp_path / "junk.dump")


def test_dump_scalar_shape_check(tmp_path):
    grid = GridSpec.cube(3, 1.0, 5)
    with pytest.raises(ValueError):
        dumps(np.zeros((4, 4, 4)), grid, "scalar")
    write_dump(tmp_path / "s.dump", np.arange(125.0).reshape(grid.shape), grid, "scalar")
    kind, _, arr = read_dump(tmp_path / "s.dump")
    assert kind == "scalar" and arr[4, 4, 4] == 124.0


def test_identity_pullback_byte_identical(tmp_path):
    path = write(tmp_path, "schema_version: 1\ngrid: {lower: [-10, -10, -10], upper: [10, 10, 10], points: 12}\n"
                           "metrics: {g: {name: schwarzschild, mass: 1.0}}\n")
    src = tmp_path / "src.dump"
    write_dump(src, load_config(path).metrics.g.build().sample(load_config(path).grid_spec()))
    res = invoke("pullback", path, "--input", src, "-o", tmp_path / "out")
    assert res.exit_code == 0, res.output
    assert (tmp_path / "out" / "pullback.dump").read_bytes() == src.read_bytes()
    row = read_csv(tmp_path / "out" / "pullback_bounds.csv")[0]
    # the file is exact, the eigenvalue bounds only up to rounding
    assert float(row["lambda_min"]) == pytest.approx(1.0, abs=1e-14)
    assert float(row["lambda_max"]) == pytest.approx(1.0, abs=1e-14)


def test_pullback_rejects_non_equivalent_alpha(tmp_path):
    path = write(tmp_path, SMALL + "diffeo: {kind: log_rotation, alpha: 1.5}\n")
    res = invoke("glue", path, "-o", tmp_path / "out")
    assert res.exit_code == 2


def test_curvature_exit_codes(tmp_path):
    ok = write(tmp_path, "schema_version: 1\ngrid: {lower: [2, 2, 2], upper: [6, 6, 6], points: 12}\n"
                         "metrics: {g: {name: schwarzschild, mass: 1.0}}\n", "ok.yaml")
    res = invoke("curvature", ok, "-o", tmp_path / "ok")
    assert res.exit_code == 0 and "max|R|" in res.output
    kind, _, R = read_dump(tmp_path / "ok" / "curvature.dump")
    assert kind == "scalar" and R.shape == (12, 12, 12)
    sing = write(tmp_path, "schema_version: 1\ngrid: {lower: [-2, -2, -2], upper: [2, 2, 2], points: 9}\n"
                           "metrics: {g: {name: gaussian, amplitude: -1.0, center: [0, 0, 0], width: 1.0}}\n",
                 "sing.yaml")
    res = invoke("curvature", sing, "-o", tmp_path / "sing")
    assert res.exit_code == 4
    assert "(4, 4, 4)" in res.output


def test_glue_non_convergence_exit_code(tmp_path):
    path = write(tmp_path, SMALL + "solver: {max_iterations: 1, nonlinear_tol: 1.0e-12}\n")
    res = invoke("glue", path, "-o", tmp_path / "out")
    assert res.exit_code == 3
    assert "no convergence" in res.output


def test_glue_and_report(tmp_path):
    path = write(tmp_path, SMALL)
    out = tmp_path / "out"
    res = invoke("glue", path, "-o", out)
    assert res.exit_code == 0, res.output
    for name in ("glued.dump", "region0_h.dump", "solve_report.csv", "summary.csv", "decay.csv", "config.resolved.yaml"):
        assert (out / name).exists(), name
    summ = read_csv(out / "summary.csv")[0]
    assert summ["converged"] == "True"
    assert float(summ["final_residual"]) <= 1e-6 * float(summ["initial_residual"])
    kind, _, glued = read_dump(out / "glued.dump")
    assert kind == "metric" and glued.eigenvalues()[0].min() > 0
    rep = invoke("report", out)
    assert rep.exit_code == 0
    assert "[summary.csv] 1 rows" in rep.output
    assert (out / "report.txt").read_text() == rep.output


@pytest.mark.parametrize("family", ["identity", "polynomial", "exponential", "hardy", "halfray", "transported"])
def test_verify_poincare_families(tmp_path, family):
    path = write(tmp_path, "schema_version: 1\nseed: 5\npoincare: {nodes: [16, 20], hardy_points: 400}\n")
    res = invoke("verify-poincare", path, "--family", family, "--samples", 2, "-o", tmp_path / "out")
    assert res.exit_code == 0, res.output
    rows = read_csv(tmp_path / "out" / f"poincare_{family}.csv")
    summary = read_csv(tmp_path / "out" / f"poincare_{family}_summary.csv")
    assert rows and summary
    if family == "identity":
        assert all(r["seed"] == "5" for r in rows) and len(rows) == 2
        assert summary[0]["ok"] == "True"
    if family == "halfray":
        assert float(summary[0]["min_slack"]) >= 0


def test_verify_poincare_seed_override_deterministic(tmp_path):
    path = write(tmp_path, "schema_version: 1\n")
    outs = []
    for k in range(2):
        res = invoke("verify-poincare", path, "--family", "identity", "--samples", 3, "--seed", 9,
                     "-o", tmp_path / f"o{k}")
        assert res.exit_code == 0, res.output
        outs.append((tmp_path / f"o{k}" / "poincare_identity.csv").read_bytes())
    assert outs[0] == outs[1]
    assert b",9," in outs[0]
