import json
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest

from misbounds import cli
from misbounds.grid import FiniteCDF, GridSet
from misbounds.lower_bound import SolverError
from misbounds.mechanism import DiscreteThresholdDistribution, save_time_matrix, worst_case_instance


def run(tmp_path, *argv, name="out.json"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out), "--no-timing"])
    return code, json.loads(out.read_text())


def test_lower_k1(tmp_path, capsys):
    code, doc = run(tmp_path, "lower", "--n", "2", "--k", "1")
    assert code == 0 and doc["status"] == "ok"
    assert doc["result"]["bound"] == pytest.approx(1.0, abs=1e-9)
    assert "lower bound n=2" in capsys.readouterr().out
    assert "duration_seconds" not in doc and doc["config"]["k"] == 1


def test_lower_rejects_one_task(tmp_path):
    with pytest.raises(SystemExit):
        cli.main(["lower", "--n", "1", "--k", "3"])


def test_upper_exact_point_mass(tmp_path, capsys):
    g = FiniteCDF(2, GridSet.from_values([1]), np.array([1.0, 1.0]))
    path = tmp_path / "g.json"
    path.write_text(json.dumps(g.to_json(2)))
    code, doc = run(tmp_path, "upper", "--g", str(path), "--exact")
    assert code == 0
    assert doc["upper_exact"]["bound_rational"] == "2/1"
    assert doc["upper_exact"]["bound_decimal_up"].startswith("2")
    assert "rational 2/1" in capsys.readouterr().out


def test_lower_then_upper_pipeline(tmp_path):
    code, low = run(tmp_path, "lower", "--n", "2", "--k", "10", name="low.json")
    assert code == 0
    code, up = run(tmp_path, "upper", "--g", str(tmp_path / "low.json"), "--exact", name="up.json")
    assert code == 0
    lo, hi = low["result"]["bound"], up["upper"]["bound_float"]
    assert lo <= hi
    assert Fraction(up["upper_exact"]["bound_rational"]) >= Fraction(lo) - Fraction(1, 10**8)
    # running the LP inside upper gives the same answer
    code, again = run(tmp_path, "upper", "--n", "2", "--k", "10", name="again.json")
    assert again["upper"]["bound_float"] == pytest.approx(hi, abs=1e-9)


def test_two_task_pipeline(tmp_path):
    grid_out, trace = tmp_path / "refined.json", tmp_path / "trace.csv"
    code, doc = run(tmp_path, "two-task", "--k", "5", "--exact", "--grid-out", str(grid_out), "--trace", str(trace))
    assert code == 0
    assert doc["upper"]["bound_float"] <= 1.5174 + 1e-4
    assert "/" in doc["upper"]["bound_rational"]
    assert len(trace.read_text().splitlines()) == doc["iterations"] + 1
    code, low = run(tmp_path, "lower", "--n", "2", "--grid", str(grid_out), name="low.json")
    assert code == 0
    assert low["result"]["bound"] == pytest.approx(doc["refined"]["lower_bound"], abs=1e-12)
    assert low["result"]["bound"] <= doc["upper"]["bound_float"]


def test_two_task_k1(tmp_path):
    code, doc = run(tmp_path, "two-task", "--k", "1", "--no-refine")
    assert code == 0 and doc["upper"]["bound_float"] == 2.0


def test_two_task_rejects_three_tasks(capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["two-task", "--n", "3", "--k", "5"])
    assert "is not a CDF" in str(err.value.code)


def test_two_task_max_iter_exit(tmp_path):
    code, doc = run(tmp_path, "two-task", "--k", "5", "--max-iter", "2", "--no-refine")
    assert code == cli.EXIT_STALL and doc["cut_status"] == "max_iter"
    assert len(doc["trace"]) == 2


def test_solver_failure_exit(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise SolverError(4, "numerical difficulties")

    monkeypatch.setattr(cli, "lower_bound", broken)
    code, doc = run(tmp_path, "lower", "--n", "2", "--k", "3")
    assert code == cli.EXIT_SOLVER and doc["status"] == "solver_failure"
    assert "numerical difficulties" in doc["error"]


def test_simulate_point_mass(tmp_path):
    dist = tmp_path / "d.json"
    dist.write_text(json.dumps(DiscreteThresholdDistribution.point_mass([1, 1]).to_json()))
    inst = tmp_path / "t.csv"
    save_time_matrix(worst_case_instance(1, 1, 2), inst)
    code, doc = run(tmp_path, "simulate", "--dist", str(dist), "--instance", str(inst), "--trials", "200")
    assert code == 0
    row = doc["rows"][0]
    assert row["analytic"] == 2.0 and row["mc_mean"] == 2.0


def test_simulate_mismatch_exit(tmp_path):
    dist = tmp_path / "d.json"
    law = DiscreteThresholdDistribution(np.array([[0.9, 0.9], [0.9, 1.1]]), np.array([0.5, 0.5]))
    dist.write_text(json.dumps(law.to_json()))
    inst = tmp_path / "t.csv"
    save_time_matrix(np.ones((2, 2)), inst)
    # makespan is 1 or 2 with equal odds; a vanishing sigma flags the estimate
    code, doc = run(tmp_path, "simulate", "--dist", str(dist), "--instance", str(inst), "--trials", "100", "--sigma", "1e-9")
    assert code == cli.EXIT_INVARIANT and doc["violations"] > 0


def test_simulate_calibrated_and_reproducible(tmp_path, monkeypatch):
    args = ["simulate", "--k", "10", "--atoms", "200", "--points", "200", "--trials", "2000", "--threads", "4"]
    reports = []
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        monkeypatch.chdir(tmp_path / name)
        code = cli.main([*args, "--out", "report.json", "--no-timing"])
        reports.append((code, (tmp_path / name / "report.json").read_bytes()))
    assert reports[0] == reports[1]
    doc = json.loads(reports[0][1])
    rows = doc["rows"]
    assert len(rows) == 200
    assert all(abs(r["phi"] - r["analytic"]) <= 1e-12 for r in rows)
    # 3 sigma exceedances are chance events (about 0.27% each); allow a binomial tail
    assert doc["violations"] <= 3
    z = [(r["mc_mean"] - r["analytic"]) / r["mc_stderr"] for r in rows if r["mc_stderr"] > 1e-9]
    assert abs(np.mean(z)) < 0.3 and 0.8 < np.std(z) < 1.2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "misbounds", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("lower", "upper", "two-task", "simulate"):
        assert cmd in out.stdout
