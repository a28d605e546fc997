import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from rabinovich_lab.cli import equilibria_table, main
from rabinovich_lab.integrator import read_trajectory_csv


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_classify(capsys):
    assert run(["classify", "--h", 0, "--c", 2, "--beta", 1], capsys)[1].startswith("case 1.a.i ")
    assert run(["classify", "--h", 1, "--c", 3, "--beta", 0], capsys)[1].startswith("case 2.a.i ")
    assert run(["classify", "--h", 0, "--c", 1, "--beta", 1], capsys)[1].startswith("case 1.b.i ")
    assert run(["classify", "--h", -4, "--c", 1, "--beta", 1], capsys)[1].strip() == "OUTSIDE_S_LIST"


def test_simulate_zero_span(tmp_path, capsys):
    out = tmp_path / "t.csv"
    code, _, _ = run(["simulate", "--mode", "none", "--u0", 0, 1.7, 0.7, "--t-end", 0, "-o", out], capsys)
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,x,y,z,H,C"
    assert len(lines) == 2


def test_simulate_full_mode_converges(tmp_path, capsys):
    out, rep = tmp_path / "full.csv", tmp_path / "rep.json"
    code, stdout, _ = run(["simulate", "--mode", "full", "--beta", 1, "--h", 0, "--c", 2,
                           "--auto-seed", "--offset", 0.05, 0.05, 0.05, "--t-end", 100,
                           "-o", out, "--report", rep], capsys)
    assert code == 0
    assert "verdict=CONVERGED_TO_ORBIT" in stdout and "final_dist=" in stdout
    report = json.loads(rep.read_text())
    assert report["final_dist"] < 1e-4
    rows = read_trajectory_csv(out)
    assert rows[0, 0] == 0.0 and rows[-1, 0] == 100.0


def test_simulate_deterministic(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"beta": 1.0, "mode": "casimir_leaf_stabilize", "h": 0.0, "c": 2.0,
                               "auto_seed": True, "offset": [0.02, 0.0, 0.01], "t_end": 10.0}))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["simulate", "--config", cfg, "-o", a], capsys)[0] == 0
    assert run(["simulate", "--config", cfg, "-o", b], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_json_format(tmp_path, capsys):
    out = tmp_path / "t.json"
    code, _, _ = run(["simulate", "--u0", 0, 1.7, 0.7, "--t-end", 1, "--format", "json", "-o", out], capsys)
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["columns"] == ["t", "x", "y", "z", "H", "C"]
    assert doc["rows"][0][:4] == [0.0, 0.0, 1.7, 0.7]


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"u0": [0.0, 1.7, 0.7], "t_end": 5.0}))
    out = tmp_path / "t.csv"
    assert run(["simulate", "--config", cfg, "--t-end", 0, "-o", out], capsys)[0] == 0
    assert len(out.read_text().splitlines()) == 2


def test_malformed_json_reports_position(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"beta": 1,\n "mode": "full" "h": 0}')
    code, _, err = run(["simulate", "--config", cfg], capsys)
    assert code == 2
    assert "line 2 column" in err


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"gain_a": -1.0}, {"mode": "sideways"}, {"u0": [1, 2]}])
def test_schema_violations(tmp_path, capsys, doc):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(doc))
    assert run(["simulate", "--config", cfg], capsys)[0] == 2


def test_missing_initial_state(capsys):
    assert run(["simulate", "--mode", "none"], capsys)[0] == 2


def test_missing_required_level(capsys):
    assert run(["classify", "--h", 1.0], capsys)[0] == 2


def test_numeric_failure_exit_code(tmp_path, capsys):
    code, _, err = run(["orbit", "--h", 0.0, "--c", 0.0, "--seed", 0, 0, 0, "-o", tmp_path / "o.json"], capsys)
    assert code == 3
    assert "numeric failure" in err


def test_orbit_then_floquet(tmp_path, capsys):
    orb, mult = tmp_path / "orbit.json", tmp_path / "mult.json"
    assert run(["orbit", "--h", 0, "--c", 2, "--beta", 1, "-o", orb], capsys)[0] == 0
    rec = json.loads(orb.read_text())
    assert {"beta", "h", "c", "period", "samples"} <= set(rec)
    assert run(["floquet", orb, "-o", mult], capsys)[0] == 0
    lam = json.loads(mult.read_text())["multipliers"]
    assert all(abs(complex(m["re"], m["im"]) - 1) < 1e-3 for m in lam)
    assert run(["floquet", orb, "--mode", "full", "-o", mult], capsys)[0] == 0
    mags = sorted(m["abs"] for m in json.loads(mult.read_text())["multipliers"])
    assert mags[-1] == pytest.approx(1, abs=1e-3) and mags[1] < 1 - 1e-3


def test_floquet_missing_file(tmp_path, capsys):
    assert run(["floquet", tmp_path / "nope.json"], capsys)[0] == 2


def test_equilibria_table(tmp_path, capsys):
    out = tmp_path / "eq.csv"
    code, stdout, _ = run(["equilibria", "--beta", 1, "--M", -2, 0, 2, "-o", out], capsys)
    assert code == 0
    rows = {(r["family"], float(r["M"])): r["stability"] for r in csv.DictReader(out.open())}
    assert rows[("E1", 2.0)] == "NONLINEARLY_STABLE"
    assert rows[("E1", 0.0)] == "UNSTABLE"
    assert rows[("E2", -2.0)] == "UNSTABLE"
    assert rows[("E3", -2.0)] == "NONLINEARLY_STABLE"
    assert rows[("E3", 0.0)] == "UNSTABLE"
    assert len(rows) == 9


def test_equilibria_table_beta_zero():
    rows = equilibria_table(0.0, [0.0, 1.0])
    verdict = {(r["family"], r["M"]): r["stability"] for r in rows}
    assert verdict[("E2", 0.0)] == "NONLINEARLY_STABLE"
    assert verdict[("E2", 1.0)] == "UNSTABLE"
    assert verdict[("E3", 1.0)] == "NONLINEARLY_STABLE"


@pytest.mark.parametrize("workers", [1, 2])
def test_sweep(tmp_path, capsys, workers):
    out = tmp_path / "atlas.csv"
    code, stdout, _ = run(["sweep", "--beta", 1, "--h-range", -3, 3, "--c-range", -3, 3, "-n", 61,
                           "--solve", "--workers", workers, "-o", out], capsys)
    assert code == 0
    assert "disjointness_violations=0" in stdout and "fiber_failures=0" in stdout
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 61 * 61
    assert all(r["case"] for r in rows)
    assert any(r["case"] == "1.a.i" for r in rows)
    for r in rows:
        if r["case"] != "OUTSIDE_S_LIST":
            assert float(r["fiber_residual"]) <= 1e-10


def test_sweep_workers_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(["sweep", "-n", 41, "--workers", 1, "-o", a], capsys)
    run(["sweep", "-n", 41, "--workers", 3, "-o", b], capsys)
    assert a.read_bytes() == b.read_bytes()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "rabinovich_lab", "classify", "--h", "0", "--c", "2"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("case 1.a.i")
