import csv
import json

import numpy as np
import pytest

from pswinfer import cli, harness
from pswinfer.bootstrap import PointEstimator
from pswinfer.ci import ci_wald
from pswinfer.data import Dataset, write_csv
from pswinfer.harness import MethodSpec
from pswinfer.sandwich import variance_fixed

from conftest import case_study_like, synthetic


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def data_csv(tmp_path):
    d = synthetic(21, n=300, p=4)
    path = tmp_path / "cohort.csv"
    write_csv(d, path, "death", "statin")
    return d, path


def test_analyze_matches_library(data_csv, tmp_path):
    d, path = data_csv
    out = tmp_path / "report.csv"
    code = cli.main(["analyze", str(path), "--outcome", "death", "--treatment", "statin",
                     "--method", "fs", "--csv", str(out)])
    assert code == 0
    (row,) = _read(out)
    fitted = PointEstimator().fit(d)
    se = variance_fixed(d, fitted.e_hat).se
    ci = ci_wald(fitted.point, se)
    assert float(row["point"]) == fitted.point
    assert float(row["se"]) == pytest.approx(se, rel=1e-12)
    assert float(row["ci_lo"]) == pytest.approx(ci.lower, rel=1e-12)
    assert (row["method"], row["ci"], row["group"], int(row["n"])) == ("fs", "wald", "overall", 300)
    assert row["error"] == ""


def test_analyze_stdout_and_json(data_csv, tmp_path, capsys):
    _, path = data_csv
    args = ["analyze", str(path), "--outcome", "death", "--treatment", "statin",
            "--method", "ns,boot-std-est", "--ci", "wald,pct", "-B", "60", "--estimand", "ato"]
    assert cli.main(args) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(cli.REPORT_COLUMNS)
    # pct pairs only with the bootstrap
    assert [tuple(l.split(",")[5:7]) for l in lines[1:]] == [
        ("ns", "wald"), ("boot-std-est", "wald"), ("boot-std-est", "pct")]
    js = tmp_path / "r.json"
    assert cli.main(args + ["--json", str(js)]) == 0
    rep = json.loads(js.read_text())
    assert len(rep) == 3 and rep[0]["estimand"] == "ATO" and rep[2]["p_value"] is None


def test_subgroup_with_single_arm(tmp_path):
    d = synthetic(5, n=200, p=3)
    g = np.zeros(d.n)
    g[np.flatnonzero(d.z == 1)[:15]] = 1  # level 1 holds treated subjects only
    x = np.column_stack([d.x, g])
    path = tmp_path / "sub.csv"
    write_csv(Dataset(d.y, d.z, x, ("a", "b", "c", "grp")), path)
    out = tmp_path / "out.csv"
    code = cli.main(["analyze", str(path), "--outcome", "y", "--treatment", "z",
                     "--method", "fs,ns", "--subgroup", "grp", "--csv", str(out)])
    rows = _read(out)
    assert code == 5  # EmptyArm is an estimation error
    assert [r["group"] for r in rows] == ["overall"] * 2 + ["grp=0"] * 2 + ["grp=1"] * 2
    for r in rows[:4]:
        assert r["error"] == "" and r["se"] != ""
    for r in rows[4:]:
        assert r["error"].startswith("EmptyArm") and r["point"] == ""


def test_analyze_bad_inputs(data_csv, tmp_path):
    _, path = data_csv
    base = ["analyze", str(path), "--outcome", "death", "--treatment", "statin"]
    assert cli.main(base[:2] + ["--outcome", "nope", "--treatment", "statin"]) == 3
    assert cli.main(base + ["--method", "bogus"]) == 5
    assert cli.main(["analyze", str(tmp_path / "missing.csv"), "--outcome", "y",
                     "--treatment", "z"]) == 3


def test_ns_at_most_bootstrap_est():
    """Across case-study-like cohorts the NS SE rarely exceeds the stdB-Est SE."""
    hits = 0
    ms = [MethodSpec.parse("ns"), MethodSpec.parse("boot-std-est")]
    for s in range(20):
        d = case_study_like(100 + s)
        ns, boot = harness.evaluate_methods(d, PointEstimator(), ms, B=400, seed=s)
        hits += ns.se <= boot.se
    assert hits >= 18


SMOKE = """\
grid:
  n: [200]
  pz: [0.3]
  py0: [0.3]
methods: [fs, ns, boot-std-est, boot-std-est/pct]
reps: 50
B: 100
superpopulation: {N: 20000}
output: {dir: out, reps_csv: true}
"""


def test_simulate_smoke_and_rerun(tmp_path, capsys):
    cfg = tmp_path / "sim.yaml"
    cfg.write_text(SMOKE)
    assert cli.main(["simulate", str(cfg), "--seed", "9"]) == 0
    out = tmp_path / "out"
    metrics = harness.read_metrics_csv(out / "metrics.csv")
    assert [m["method"] for m in metrics] == [
        "fs/wald", "ns/wald", "boot-std-est/wald", "boot-std-est/pct"]
    assert all(m["rep_failures"] <= 2 for m in metrics)
    assert "scenario 0 n=200" in capsys.readouterr().out
    assert "done" in (out / "run.log").read_text()
    first = (out / "metrics.csv").read_bytes(), (out / "reps.csv").read_bytes()
    assert cli.main(["simulate", str(cfg), "--seed", "9", "--output-dir", str(tmp_path / "b"),
                     "--workers", "2"]) == 0
    assert first == ((tmp_path / "b" / "metrics.csv").read_bytes(),
                     (tmp_path / "b" / "reps.csv").read_bytes())


def test_simulate_errors(tmp_path, capsys):
    cfg = tmp_path / "sim.yaml"
    cfg.write_text(SMOKE)
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate", str(cfg)])
    assert exc.value.code == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("reps: 5\nmethods: [fs, nope]\n")
    assert cli.main(["simulate", str(bad), "--seed", "1"]) == 2
    assert "methods.1" in capsys.readouterr().err


def test_full_grid_reduced(tmp_path):
    cfg = tmp_path / "full.yaml"
    cfg.write_text("methods: [fs]\nreps: 2\nB: 2\nsuperpopulation: {N: 2000}\noutput: {dir: o}\n")
    assert cli.main(["simulate", str(cfg), "--seed", "1"]) == 0
    rows = harness.read_metrics_csv(tmp_path / "o" / "metrics.csv")
    assert len(rows) == 160
    assert len({(r["n"], r["pz"], r["py0"]) for r in rows}) == 160


def test_calibrate(tmp_path, capsys):
    save = tmp_path / "sp"
    assert cli.main(["calibrate", "--pz", "0.3", "--py0", "0.5", "--seed", "2", "--N", "5000",
                     "--save", str(save), "--export-csv", str(tmp_path / "sp.csv")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["N"] == 5000 and rep["target_pz"] == 0.3
    assert abs(rep["achieved_pz"] - 0.3) < 1e-4
    assert (tmp_path / "sp.npz").exists() and (tmp_path / "sp.csv").exists()


def test_methods_listing(capsys):
    assert cli.main(["methods"]) == 0
    out = capsys.readouterr().out
    for name in ("fs", "ns", "ms", "pes", "boot-strat-fixed", "bca"):
        assert name in out
