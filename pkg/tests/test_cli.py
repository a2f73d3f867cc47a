import csv
import io
import json
import subprocess
import sys

import pytest

from fedqq import cli
from fedqq.coverage import coverage_law, records_to_csv, sweep
from fedqq.planners import FederationShape, Method, Plan, make_plan


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_plan_qqm(capsys):
    code, out, err = run(capsys, "plan", "--method", "qqm", "-m", "3", "-n", "3", "--alpha", "0.1")
    assert code == 0 and err == ""
    doc = json.loads(out)
    assert doc["orders"]["ell"] == 3 and doc["orders"]["k"] == 3
    assert doc["predicted"]["mean"] == pytest.approx(0.9, abs=1e-12)


def test_plan_qqc_table_row(capsys):
    code, out, _ = run(capsys, "plan", "--method", "qqc", "-m", "200", "-n", "20", "--beta", "0.2")
    assert code == 0
    pred = json.loads(out)["predicted"]
    assert pred["mean"] == pytest.approx(0.90524, abs=1e-5)
    assert (pred["q_lo"], pred["q_hi"]) == pytest.approx((0.90048, 0.91004), abs=1e-5)


def test_plan_trivial_warns(capsys):
    code, out, err = run(capsys, "plan", "--method", "qqm", "-m", "2", "-n", "4")
    assert code == 0
    assert json.loads(out)["guarantee"] == "TRIVIAL"
    assert "warning" in err


def test_plan_csv(capsys):
    code, out, _ = run(capsys, "plan", "--method", "central-m", "-m", "1", "-n", "9", "--format", "csv")
    assert code == 0
    (row,) = rows(out)
    assert row["r"] == "9" and float(row["mean"]) == 0.9


@pytest.mark.parametrize("argv", [
    ["plan", "--method", "nope", "-m", "3", "-n", "3"],
    ["plan", "-m", "3"],
    ["plan", "-m", "3", "-n", "3", "--sizes", "3,3,3"],
    ["plan", "-m", "2", "--sizes", "3,3,3"],
    ["plan", "--sizes", "3,x"],
    ["plan", "-m", "0", "-n", "3"],
    ["plan", "--sizes-from", "multinomial", "-m", "5"],
    ["simulate", "-m", "3", "-n", "3"],
])
def test_usage_errors_exit_2(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 2 and out == "" and "error" in err


@pytest.mark.parametrize("argv", [
    ["plan", "--alpha", "1.5", "-m", "3", "-n", "3"],
    ["plan", "--tol", "-1", "-m", "3", "-n", "3"],
    ["frobnicate"],
])
def test_argparse_errors_exit_2(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_numeric_failure_exit_3(capsys):
    code, out, err = run(capsys, "plan", "--method", "qqm", "-m", "30", "-n", "30", "--tol", "1e-300")
    assert code == 3 and "numerical failure" in err
    # the override does not leak into later calls
    code, _, _ = run(capsys, "plan", "--method", "qqm", "-m", "30", "-n", "30")
    assert code == 0


def test_malformed_plan_exit_2(capsys, tmp_path):
    bad = tmp_path / "plan.json"
    bad.write_text('{"method": "QQM", "m": 3}')
    code, _, err = run(capsys, "coverage", "--plan", str(bad))
    assert code == 2


def test_coverage_central_row(capsys):
    code, out, _ = run(capsys, "coverage", "--method", "central-m", "-m", "1", "-n", "4000")
    assert code == 0
    (row,) = rows(out)
    got = [float(row[k]) for k in ("mean", "std", "q_lo", "q_hi")]
    assert got == pytest.approx([0.90002, 0.00474, 0.89605, 0.90403], abs=1e-5)


def test_coverage_qqm_right_block(capsys):
    code, out, _ = run(capsys, "coverage", "--method", "qqm", "-m", "20", "-n", "200")
    assert float(rows(out)[0]["mean"]) == pytest.approx(0.90012, abs=1e-5)


def test_coverage_trivial(capsys):
    code, out, _ = run(capsys, "coverage", "--method", "qqm", "-m", "2", "-n", "4")
    (row,) = rows(out)
    assert code == 0 and float(row["mean"]) == 1.0 and float(row["std"]) == 0.0


def test_plan_coverage_round_trip(capsys, tmp_path):
    path = tmp_path / "plan.json"
    code, _, _ = run(capsys, "plan", "--method", "qqc-fast", "-m", "200", "-n", "20", "--out", str(path))
    assert code == 0
    code, out, _ = run(capsys, "coverage", "--plan", str(path))
    assert code == 0
    law = coverage_law(Plan.from_json(path.read_text()))
    summ = law.summary(0.2)
    direct = make_plan(Method.QQC_FAST, FederationShape.equal(200, 20, 0.1, 0.2))
    assert Plan.from_json(path.read_text()).to_json() == direct.to_json()
    row = rows(out)[0]
    for key in ("mean", "std", "q_lo", "q_hi"):
        assert row[key] == f"{summ[key]:.12g}"
    assert float(row["q_hi"]) == pytest.approx(0.91556, abs=1e-5)


def test_plan_from_stdin():
    plan = make_plan(Method.QQM, FederationShape.equal(10, 20, 0.1))
    proc = subprocess.run([sys.executable, "-m", "fedqq.cli", "coverage", "--plan", "-", "--format", "json"],
                          input=plan.to_json(), capture_output=True, text=True, check=True)
    doc = json.loads(proc.stdout)
    assert doc["mean"] == pytest.approx(coverage_law(plan).mean, abs=1e-11)
    assert doc["law"] == "BETA_BETA"


def test_coverage_cdf_table(capsys, tmp_path):
    code, out, _ = run(capsys, "coverage", "--method", "qqm", "-m", "5", "-n", "8", "--cdf", "11",
                       "--format", "json")
    table = json.loads(out)["cdf"]
    assert len(table) == 11
    vals = [b for _, b in table]
    assert vals == sorted(vals) and vals[0] < 1e-5 and vals[-1] > 1 - 1e-5
    code, _, err = run(capsys, "coverage", "--method", "qqm", "-m", "5", "-n", "8", "--cdf", "11")
    assert code == 2
    dest = tmp_path / "cdf.csv"
    code, _, _ = run(capsys, "coverage", "--method", "qqm", "-m", "5", "-n", "8", "--cdf", "11",
                     "--cdf-out", str(dest))
    assert code == 0 and dest.read_text().startswith("t,cdf\n")


def test_sweep_matches_library(capsys):
    code, out, _ = run(capsys, "sweep", "--methods", "qqm,central-c", "--ms", "2,10", "--ns", "4,21")
    assert code == 0
    lib = sweep([Method.QQM, Method.CENTRAL_C], [(m, n) for m in (2, 10) for n in (4, 21)], 0.1, 0.2)
    assert out == records_to_csv(lib)
    assert "TRIVIAL" in out


def test_sweep_single_cell_matches_coverage(capsys):
    _, out, _ = run(capsys, "sweep", "--methods", "qqc", "-m", "30", "-n", "12")
    (rec,) = rows(out)
    _, out, _ = run(capsys, "coverage", "--method", "qqc", "-m", "30", "-n", "12")
    cov = rows(out)[0]
    assert float(rec["delta_E"]) == pytest.approx(float(cov["mean"]) - 0.9, abs=1e-11)
    assert float(rec["delta_q_beta"]) == pytest.approx(float(cov["q_lo"]) - 0.9, abs=1e-11)
    assert float(rec["delta_q_1mbeta"]) == pytest.approx(float(cov["q_hi"]) - 0.9, abs=1e-11)


def test_sweep_all_trivial(capsys):
    code, out, err = run(capsys, "sweep", "--methods", "qqm,qqc", "--ms", "1,2", "--ns", "1,2")
    assert code == 0 and "TRIVIAL" in err
    assert all(r["delta_E"] == "TRIVIAL" for r in rows(out))


def test_sweep_fit(capsys, tmp_path):
    grid = ["--ms", "4,10,21,46", "--ns", "4,10,21,46"]
    code, out, _ = run(capsys, "sweep", "--methods", "central-c", *grid, "--fit", "--format", "json")
    doc = json.loads(out)
    assert len(doc["records"]) == 16
    fit = doc["fits"]["CENTRAL_C"]["delta_E"]
    assert set(fit) == {"c", "gamma", "delta", "loss"}
    assert fit["gamma"] == pytest.approx(0.5, abs=0.1)
    code, _, _ = run(capsys, "sweep", "--methods", "central-c", *grid, "--fit")
    assert code == 2
    dest = tmp_path / "fit.json"
    code, _, _ = run(capsys, "sweep", "--methods", "central-c", *grid, "--fit", "--fit-out", str(dest))
    assert code == 0 and json.loads(dest.read_text())["CENTRAL_C"]["delta_E"] == fit


def test_sweep_multinomial_sizes(capsys):
    code, out, _ = run(capsys, "sweep", "--methods", "qqm-nj", "--sizes-from", "multinomial",
                       "-m", "25", "--N", "4000", "--seed", "0")
    assert code == 0
    (rec,) = rows(out)
    assert rec["m"] == "25" and rec["n"] == "160"
    # the published value came from one unrecorded draw; se across draws is ~8e-4
    assert float(rec["delta_E"]) + 0.9 == pytest.approx(0.90238, abs=4e-3)
    assert cli.multinomial_sizes(25, 4000, 0) == cli.multinomial_sizes(25, 4000, 0)
    assert sum(cli.multinomial_sizes(25, 4000, 3)) == 4000


def test_sizes_file(capsys, tmp_path):
    f = tmp_path / "sizes.txt"
    f.write_text("30\n40\n25\n")
    code, out, _ = run(capsys, "plan", "--method", "qqm-nj", "--sizes", str(f))
    assert code == 0 and json.loads(out)["ns"] == [30, 40, 25]


def test_simulate_uniform_qqm(capsys):
    code, out, err = run(capsys, "simulate", "--method", "qqm", "-m", "3", "-n", "3", "-R", "100000",
                         "--seed", "1", "--format", "json")
    assert code == 0
    assert json.loads(out)["summary"]["mean"] == pytest.approx(0.9, abs=0.004)


def test_simulate_fedcp_avg(capsys):
    code, out, _ = run(capsys, "simulate", "--method", "fedcp-avg", "-m", "5", "-n", "10", "-R", "100000",
                       "--seed", "2", "--format", "json")
    summ = json.loads(out)["summary"]
    assert summ["mean"] == pytest.approx(10 / 11, abs=4 * summ["se"])


def test_simulate_deterministic(capsys, tmp_path):
    argv = ["simulate", "--method", "qqc", "-m", "8", "-n", "12", "-R", "500", "--seed", "42",
            "--model", '{"kind": "exponential", "lam": 2}', "--n-test", "50"]
    _, a, err = run(capsys, *argv)
    _, b, _ = run(capsys, *argv)
    assert a == b and a.startswith("replication,threshold,cond_coverage,emp_coverage,length\n")
    assert json.loads(err)["R"] == 500
    model = tmp_path / "model.json"
    model.write_text('{"kind": "exponential", "lam": 2}')
    _, c, _ = run(capsys, *argv[:-4], "--model", str(model), "--n-test", "50")
    assert c == a
    _, d, _ = run(capsys, *argv[:8], "43", *argv[9:])
    assert d != a


def test_validate(capsys):
    code, out, _ = run(capsys, "validate")
    doc = json.loads(out)
    assert code == 0 and doc["status"] == "PASS"
    code, out, err = run(capsys, "validate", "--inject-fault", "nothing")
    assert code == 2


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "fedqq.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("plan", "coverage", "sweep", "simulate", "validate"):
        assert name in proc.stdout
