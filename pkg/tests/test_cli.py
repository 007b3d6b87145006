import csv
import json
import subprocess
import sys

import pytest
import yaml

from mgdefense.cli import main
from mgdefense.engine import SERIES
from mgdefense.analysis import METRIC_COLUMNS


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_run_resilient_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "r"
    assert main(["run", "--preset", "case1_resilient", "--out", str(out)]) == 0
    summ = json.loads((out / "summary.json").read_text())
    assert summ["converged"] is True and summ["status"] == "completed"
    assert summ["t_end"] == 30.0
    header, rows = read_csv(out / "trace.csv")
    assert header[0] == "time" and len(header) == 1 + 4 * len(SERIES)
    assert float(rows[-1][0]) == pytest.approx(30.0)
    assert rows[1][0] == "0.01"
    mh, mrows = read_csv(out / "metrics.csv")
    assert mh == ["time", *METRIC_COLUMNS] and len(mrows) == len(rows)
    assert "case1_resilient: completed" in capsys.readouterr().out


def test_run_conventional_reports_divergence(tmp_path, capsys):
    out = tmp_path / "c"
    assert main(["run", "--preset", "case1_conventional", "--out", str(out)]) == 0
    summ = json.loads((out / "summary.json").read_text())
    assert summ["status"] == "diverged" and summ["diverged_at"] > 5.0
    assert "diverged at t =" in capsys.readouterr().out


def test_column_set_depends_only_on_config_shape(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--preset", "case1_resilient", "--out", str(a), "--t-end", "6"])
    main(["run", "--preset", "case1_conventional", "--out", str(b), "--t-end", "6"])
    assert read_csv(a / "trace.csv")[0] == read_csv(b / "trace.csv")[0]
    assert read_csv(a / "metrics.csv")[0] == read_csv(b / "metrics.csv")[0]


def test_reruns_are_byte_identical(tmp_path):
    out = tmp_path / "x"
    argv = ["run", "--preset", "case3", "--out", str(out), "--t-end", "13"]
    main(argv)
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    main(argv)
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first


def test_scenario_file_with_override(tmp_path):
    f = tmp_path / "f.yaml"
    assert main(["dump", "--preset", "case1_resilient", "--out", str(f)]) == 0
    out = tmp_path / "o"
    assert main(["run", "--scenario", str(f), "--set", "controller.beta_f=35", "--t-end", "6",
                 "--out", str(out)]) == 0
    summ = json.loads((out / "summary.json").read_text())
    assert "controller.beta_f=35" in summ["overrides"]
    assert "solver.t_end=6.0" in summ["overrides"]
    assert yaml.safe_load((out / "scenario.yaml").read_text())["controller"]["beta_f"] == 35.0


def test_default_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MGDEFENSE_OUT", str(tmp_path))
    assert main(["run", "--preset", "baseline_resilient", "--t-end", "1"]) == 0
    assert (tmp_path / "baseline_resilient" / "summary.json").exists()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\ngraph:\n  adjacency: [[0, 1]\n")
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "z")]) == 2
    err = capsys.readouterr().err
    assert f"{bad}:" in err and "error:" in err
    assert main(["run", "--preset", "case1_resilient", "--set", "controller.nope=1",
                 "--out", str(tmp_path / "z")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["run", "--preset", "case9"])
    assert exc.value.code == 2


def test_sweep_single_value(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", "--preset", "case1_resilient", "--values", "350", "--t-end", "6",
                 "--out", str(out)]) == 0
    header, rows = read_csv(out / "sweep.csv")
    assert header[0] == "value" and len(rows) == 1 and rows[0][1] == "completed"
    assert (out / "controller.beta_f=350" / "summary.json").exists()


def test_sweep_rejects_nonpositive_gain_per_row(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", "--preset", "case1_resilient", "--values", "35", "-1", "--t-end", "6",
                 "--jobs", "2", "--out", str(out)]) == 0
    data = json.loads((out / "sweep.json").read_text())
    by_value = {r["value"]: r for r in data["rows"]}
    assert by_value[-1]["status"] == "invalid" and "positive" in by_value[-1]["error"]
    assert by_value[35]["status"] == "completed"
    assert [r["value"] for r in data["rows"]] == [-1, 35]


def test_validate_preset_passes(capsys):
    assert main(["validate", "--preset", "case1_resilient"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "all checks passed" in out


def test_validate_names_reachability_failure(capsys):
    assert main(["validate", "--preset", "case1_resilient", "--set", "graph.pins=[[0,0,0,0],[0,0,0,0]]"]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] leader reachability (initial topology)" in out


def test_validate_flags_quadratic_attack_at_gamma_one(capsys):
    assert main(["validate", "--preset", "case1_resilient", "--set", "controller.gamma=1"]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] attack derivative bound (attack 1" in out and "grows without bound" in out


def test_validate_checks_post_event_topologies(capsys):
    assert main(["validate", "--preset", "case3"]) == 0
    out = capsys.readouterr().out
    assert "topology from t = 12 s" in out and "topology from t = 18 s" in out


def test_dump_to_stdout(capsys):
    assert main(["dump", "--preset", "case2"]) == 0
    doc = yaml.safe_load(capsys.readouterr().out)
    assert doc["events"][0]["kind"] == "load_step"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "mgdefense", "validate", "--preset", "case2"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "all checks passed" in res.stdout
