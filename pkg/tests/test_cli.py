import json
import subprocess
import sys

import numpy as np
import pytest

from sbireduce.cli import main
from sbireduce.harness import read_records

FAST_CFG = {"nde": {"n_components": 2, "hidden": [20], "train": {"max_epochs": 20, "patience": 3}}, "n_post": 200,
            "n_eval": 200}


@pytest.fixture
def fast_config(tmp_path):
    p = tmp_path / "fast.json"
    p.write_text(json.dumps(FAST_CFG))
    return str(p)


def test_run_writes_one_record_per_seed(tmp_path, fast_config, capsys):
    out = tmp_path / "res"
    code = main(["run", "--task", "gmm1d", "--method", "regular", "--budget", "40", "--seeds", "5",
                 "--out", str(out), "--config", fast_config])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["written"] == 5 and summary["failed"] == 0
    recs = read_records(summary["path"])
    assert sorted(r.seed for r in recs) == [0, 1, 2, 3, 4]
    assert all(r.budget == 40 and r.method == "regular" for r in recs)


def test_aggregate_formats(tmp_path, fast_config, capsys):
    out = tmp_path / "res"
    for method in ("regular", "sp", "surrogate"):
        assert main(["run", "--task", "gmm1d", "--method", method, "--budget", "40,60", "--seed-list", "0,1",
                     "--surrogate-mult", "2", "--out", str(out), "--config", fast_config]) == 0
    capsys.readouterr()
    assert main(["aggregate", "--in", str(out), "--baseline", "regular", "--format", "json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    cells = {(s["method"], s["budget"]) for s in payload["summaries"]}
    assert cells == {(m, b) for m in ("sp", "surrogate") for b in (40, 60)}
    assert len(payload["table"]) == 2

    assert main(["aggregate", "--in", str(out), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("task,budget,method,baseline") and len(lines) == 5

    assert main(["aggregate", "--in", str(out), "--format", "table", "--variant", "median"]) == 0
    assert "Median Reduction" in capsys.readouterr().out


def test_metrics_identical_files(tmp_path, capsys):
    a = tmp_path / "a.csv"
    np.savetxt(a, np.random.default_rng(0).normal(size=(60, 2)), delimiter=",")
    assert main(["metrics", str(a), str(a)]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["mmd2"] == 0 and res["ed2"] == 0
    assert 0.0 <= res["c2st"] <= 1.0


def test_sp_subcommand(tmp_path, capsys):
    y = tmp_path / "y.csv"
    np.savetxt(y, np.random.default_rng(1).normal(size=(300, 2)), delimiter=",")
    assert main(["sp", "--in", str(y), "--n", "12", "--seed", "3"]) == 0
    captured = capsys.readouterr()
    pts = np.loadtxt(captured.out.splitlines(), delimiter=",")
    assert pts.shape == (12, 2)
    info = json.loads(captured.err.strip().splitlines()[-1])
    assert info["n"] == 12 and "converged" in info


def test_tasks_list_and_show(capsys):
    assert main(["tasks", "list"]) == 0
    names = capsys.readouterr().out.split()
    assert {"gmm1d", "two_moons", "bayes_lr", "slcp", "bernoulli_glm", "sisson"} <= set(names)
    assert main(["tasks", "show", "slcp"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["dim_theta"] == 5 and info["dim_x"] == 16


def test_unknown_task_error_line(capsys):
    code = main(["run", "--task", "lotka", "--method", "regular", "--budget", "100"])
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "UnknownTaskError"
    assert "two_moons" in err["message"]


def test_unknown_method_error_line(capsys):
    assert main(["run", "--task", "gmm1d", "--method", "nle", "--budget", "100"]) != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "snle_surrogate" in err["message"]


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sbireduce.cli", "tasks", "list"], capture_output=True, text=True)
    assert proc.returncode == 0 and "gmm1d" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "sbireduce.cli", "metrics", str(tmp_path / "missing.csv"), "x.csv"],
                          capture_output=True, text=True)
    assert proc.returncode != 0
    assert "error" in json.loads(proc.stderr.strip().splitlines()[-1])
