import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thinporous import cli
from thinporous.cellproblems import PermeabilityTensor, permeability
from thinporous.config import ConfigError, dumps, load_config, parse_lines
from thinporous.darcy import MacroDomain, manufactured_force, solve_darcy
from thinporous.grid import ObstacleShape, build_geometry, read_field_csv
from thinporous.linsolve import SolverConfig


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def write_cfg(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# --- classify


def test_classify_htpm_valid(capsys):
    code, out, _ = run(["classify", "--delta", 2, "--gamma", 1.5], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["darcy_valid"] and rep["gamma_c"] == 2 and rep["regime"] == "HTPM"


def test_classify_vtpm_invalid(capsys):
    code, out, _ = run(["classify", "--delta", 0.5, "--gamma", 1.2], capsys)
    assert code == 2 and json.loads(out)["darcy_valid"] is False


@pytest.mark.parametrize("argv", [
    ["classify", "--delta", "0", "--gamma", "1"],
    ["classify", "--delta", "x", "--gamma", "1"],
    ["classify", "--gamma", "1"],
    ["classify", "--delta", "1", "--gamma", "1", "--epsilon", "2"],
    ["frobnicate"],
    [],
])
def test_usage_errors(argv, capsys):
    assert run(argv, capsys)[0] == 64


def test_classify_rational_input(capsys):
    code, out, _ = run(["classify", "--delta", "3/2", "--gamma", "3/2"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["c_delta"] == 1.5 and rep["r_conjugate"] == 3.0


# --- config and JSON


def test_config_parsing(tmp_path):
    p = write_cfg(tmp_path / "a.cfg", "# comment\n\ngeometry.n = 16  # trailing\n"
                  "geometry.shape = ellipse\nsolver.precond = jacobi\n")
    cfg = load_config(p, ["geometry.n=24"])
    assert cfg["geometry.n"] == 24 and cfg.geometry.shape == "ellipse"
    assert cfg["solver.precond"] == "jacobi" and cfg["domain.m"] == 32
    assert cfg.explicit("geometry.n") and not cfg.explicit("domain.m")


@pytest.mark.parametrize("text", [
    "geometry.colour = red\n", "geometry.n = many\n", "no equals sign\n", "toplevel = 1\n",
    "geometry.shape = hexagon\n", "output.fields = maybe\n",
])
def test_config_rejects(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path / "b.cfg", text))


def test_parse_lines_utf8_comments():
    assert parse_lines("regime.delta = 2 # δ > 1\n") == [(1, "regime.delta", "2")]


def test_json_seventeen_digits():
    assert dumps(0.1) == "0.10000000000000001"
    assert dumps({"a": [1, 2.5], "b": None, "c": True}) == \
        '{\n  "a": [1, 2.5],\n  "b": null,\n  "c": true\n}'
    with pytest.raises(ValueError):
        dumps(float("nan"))


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_json_float_round_trip(x):
    assert json.loads(dumps([x]))[0] == x


# --- cell


def test_cell_vtpm_empty(tmp_path, capsys):
    code, out, _ = run(["cell", "--set", "regime.delta=0.5", "--set", "geometry.shape=none",
                        "--set", "geometry.n=16", "--set", f"output.dir={tmp_path}"], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "permeability.json").read_text())
    assert doc["regime"] == "VTPM" and np.abs(np.array(doc["k"]) - np.eye(2)).max() <= 1e-10
    assert set(doc) >= {"regime", "k", "n", "nz", "residuals", "asymmetry"}


def test_cell_ptpm_poiseuille(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "p.cfg", "regime.delta = 1\ngeometry.shape = none\n"
                    f"geometry.n = 8\ngeometry.nz = 32\noutput.dir = {tmp_path}\n"
                    "output.fields = true\n")
    assert run(["cell", cfg], capsys)[0] == 0
    doc = json.loads((tmp_path / "permeability.json").read_text())
    assert abs(doc["k"][0][0] - 1 / 12) <= 1e-4 and doc["nz"] == 32
    u = read_field_csv(tmp_path / "u1.csv")
    assert u.shape == (8, 8, 33)
    assert (tmp_path / "w1.csv").read_text().startswith("i,j,k,x,y,z,value")


def test_cell_htpm_empty_fails(tmp_path, capsys):
    code, _, err = run(["cell", "--set", "regime.delta=2", "--set", "geometry.shape=none",
                        "--set", "geometry.n=16", "--set", f"output.dir={tmp_path}"], capsys)
    assert code == 70 and "obstacle" in err


def test_cell_bad_geometry(tmp_path, capsys):
    code, _, _ = run(["cell", "--set", "regime.delta=2", "--set", "geometry.radius=0.51",
                      "--set", f"output.dir={tmp_path}"], capsys)
    assert code == 64


def test_solver_failure_exit(tmp_path, capsys):
    code, _, _ = run(["cell", "--set", "regime.delta=2", "--set", "geometry.n=16",
                      "--set", "solver.max_iter=3", "--set", f"output.dir={tmp_path}"], capsys)
    assert code == 70


# --- darcy


def test_darcy_round_trip_bitwise(tmp_path, capsys):
    cdir = tmp_path / "cell"
    common = ["--set", "regime.delta=2", "--set", "geometry.n=16"]
    assert run(["cell", *common, "--set", f"output.dir={cdir}"], capsys)[0] == 0
    kt = PermeabilityTensor.from_json((cdir / "permeability.json").read_text())
    ref = permeability("HTPM", build_geometry(ObstacleShape.disk(0.25), 16))
    assert np.array_equal(kt.k, ref.k)
    ddir = tmp_path / "darcy"
    code, out, _ = run(["darcy", "--set", f"domain.k_json={cdir / 'permeability.json'}",
                        "--set", "domain.m=16", "--set", "domain.force=manufactured",
                        "--set", f"output.dir={ddir}"], capsys)
    assert code == 0
    dom = MacroDomain.from_force(1.0, 1.0, 16, 16, manufactured_force())
    sol = solve_darcy(dom, ref, SolverConfig())
    assert np.array_equal(read_field_csv(ddir / "P.csv"), sol.P)
    assert np.array_equal(read_field_csv(ddir / "Vx.csv"), sol.Vx)
    assert np.array_equal(read_field_csv(ddir / "Vy.csv"), sol.Vy)
    summary = json.loads((ddir / "darcy_summary.json").read_text())
    assert summary["regime"] == "HTPM" and summary["residual"] <= 1e-10


def test_darcy_inline_closed_box(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "d.cfg", "domain.k11 = 1\ndomain.k12 = 0\ndomain.k22 = 1\n"
                    f"domain.regime = HTPM\ndomain.m = 16\noutput.dir = {tmp_path}\n")
    code, out, _ = run(["darcy", cfg], capsys)
    assert code == 0 and json.loads(out)["max_abs_velocity"] <= 1e-10
    P = read_field_csv(tmp_path / "P.csv")
    x = (np.arange(16) + 0.5) / 16
    assert np.abs(P - (x[:, None] - 0.5)).max() <= 1e-10


def test_darcy_missing_k(tmp_path, capsys):
    assert run(["darcy", "--set", f"output.dir={tmp_path}"], capsys)[0] == 64
    assert run(["darcy", "--set", "domain.k_json=/nonexistent.json"], capsys)[0] == 64


def test_darcy_not_spd(tmp_path, capsys):
    code, _, _ = run(["darcy", "--set", "domain.k11=1", "--set", "domain.k12=2",
                      "--set", "domain.k22=1", "--set", "domain.regime=HTPM",
                      "--set", f"output.dir={tmp_path}"], capsys)
    assert code == 64


# --- pipeline

VTPM_CFG = """regime.delta = 0.5
regime.gamma = 1
regime.epsilon = 0.1
geometry.shape = disk
geometry.radius = 0.25
geometry.n = 32
domain.m = 16
domain.force = manufactured
"""


def test_pipeline_vtpm(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "v.cfg", VTPM_CFG + f"output.dir = {tmp_path}\n")
    code, out, _ = run(["pipeline", cfg], capsys)
    doc = json.loads((tmp_path / "pipeline.json").read_text())
    assert code == 0 and json.loads(out) == doc
    assert abs(doc["scale"]["factor"] - 0.1) <= 1e-16
    k = np.array(doc["permeability"]["k"])
    assert abs(k[0, 0] - k[1, 1]) <= 1e-10 * k[0, 0] and abs(k[0, 1]) <= 1e-10
    assert doc["darcy"]["prefactor"] == 1 / 12


def test_pipeline_ptpm_empty(tmp_path, capsys):
    code, out, _ = run(["pipeline", "--set", "regime.delta=1", "--set", "regime.gamma=1",
                        "--set", "regime.epsilon=0.2", "--set", "geometry.shape=none",
                        "--set", "geometry.n=8", "--set", "geometry.nz=32",
                        "--set", "domain.m=8", "--set", f"output.dir={tmp_path}"], capsys)
    doc = json.loads(out)
    assert code == 0 and abs(doc["permeability"]["k"][0][0] - 1 / 12) <= 1e-4


def test_pipeline_htpm_empty(tmp_path, capsys):
    code, _, _ = run(["pipeline", "--set", "regime.delta=2", "--set", "regime.gamma=1",
                      "--set", "regime.epsilon=0.1", "--set", "geometry.shape=none",
                      "--set", f"output.dir={tmp_path}"], capsys)
    assert code == 70


@pytest.mark.parametrize("delta,gamma,expected", [
    ("0.5", "1.2", 2), ("0.5", "1", 0), ("2", "2", 0), ("2", "2.5", 2), ("1", "1.01", 2),
])
def test_pipeline_validity_gate(tmp_path, capsys, delta, gamma, expected):
    code, out, err = run(["pipeline", "--set", f"regime.delta={delta}",
                          "--set", f"regime.gamma={gamma}", "--set", "regime.epsilon=0.1",
                          "--set", "geometry.n=16", "--set", "geometry.nz=8",
                          "--set", "domain.m=8", "--set", f"output.dir={tmp_path}"], capsys)
    doc = json.loads(out)
    assert code == expected
    if expected == 2:
        assert doc["scale"] is None and "refused" in doc and "refused" in err
    else:
        assert doc["scale"]["factor"] > 0


def test_pipeline_needs_epsilon(tmp_path, capsys):
    code, _, _ = run(["pipeline", "--set", "regime.delta=2", "--set", "regime.gamma=1"], capsys)
    assert code == 64


# --- validate


def test_validate_all_pass(capsys):
    code, out, _ = run(["validate"], capsys)
    assert code == 0 and "FAIL" not in out and f"{len(cli.VALIDATION_CHECKS)}/" in out


def test_validate_corrupted_tolerance(capsys):
    code, out, _ = run(["validate", "--tol", "poiseuille=1e-9", "--tol", "adjointness=0"],
                       capsys)
    assert code == 2
    fails = [line for line in out.splitlines() if line.startswith("FAIL")]
    assert len(fails) == 2 and "poiseuille" in fails[0] + fails[1]


def test_validate_unknown_check(capsys):
    assert run(["validate", "--tol", "nonsense=1"], capsys)[0] == 64


def test_validate_exit_cap(monkeypatch, capsys):
    checks = {f"c{i}": (lambda: 1.0, 0.0) for i in range(130)}
    monkeypatch.setattr(cli, "VALIDATION_CHECKS", checks)
    assert run(["validate"], capsys)[0] == 125


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "thinporous", "classify", "--delta", "1",
                           "--gamma", "1"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["regime"] == "PTPM"
