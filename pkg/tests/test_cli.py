from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from pibic.cli import main
from pibic.harness import ExperimentConfig, generate_data
from pibic.star import simulate_null_star


@pytest.fixture
def dataset_csv(tmp_path):
    path = tmp_path / "data.csv"
    generate_data(ExperimentConfig(n=60, K=5, alt="single:1", effect_size=0.5), 0).to_csv(path)
    return path


def test_test_subcommand(dataset_csv, tmp_path, capsys):
    out = tmp_path / "res.json"
    assert main(["test", "--input", str(dataset_csv), "--K", "5", "--tests", "B_S,M_S,R_n",
                 "--reps", "5000", "--out", str(out)]) == 0
    rec = json.loads(out.read_text())
    assert rec["n"] == 60 and rec["K"] == 5
    assert [r["statistic"] for r in rec["results"]] == ["B_S", "M_S", "R_n"]
    assert all(r["reject"] for r in rec["results"])


def test_test_bootstrap(dataset_csv, capsys):
    assert main(["test", "--input", str(dataset_csv), "--K", "3", "--tests", "B_N,L_b",
                 "--bootstrap", "100", "--seed", "4"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert {r["reference_kind"] for r in rec["results"]} == {"bootstrap"}
    assert all(0 < r["reference_value"] <= 1 for r in rec["results"])


def test_simulate_critical(tmp_path):
    out = tmp_path / "crit.csv"
    assert main(["simulate-critical", "--law", "B_S", "--K", "10", "--n", "100", "--alpha", "0.05",
                 "--reps", "5000", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 1 and abs(float(rows[0]["quantile"]) - 8.724) < 0.3


def test_simulate_critical_law_kind(capsys):
    assert main(["simulate-critical", "--law", "gumbel_half", "--alpha", "0.05,0.1", "--reps", "2000"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert [float(r["alpha"]) for r in rows] == [0.05, 0.1]


def test_type1_study(tmp_path, capsys):
    cfg = tmp_path / "t1.cfg"
    cfg.write_text("n = 50\nK = 5\ntests = M_S, R_n\n")
    out = tmp_path / "t1.csv"
    assert main(["type1-study", "--config", str(cfg), "--reps", "200", "--out", str(out)]) == 0
    assert "M_S" in capsys.readouterr().out
    assert out.read_text().startswith("test,alpha=0.1")


def test_power_study(capsys):
    assert main(["power-study", "--K", "4", "--reps", "100", "--null-reps", "500", "--tests", "B_S",
                 "--max-m", "1", "--effect-size", "0.3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "alternative,test,power" and len(lines) == 1 + 2 * 3


def test_lindley(capsys):
    assert main(["lindley", "--K", "1,10", "--sqrt-n-max", "4", "--reps", "5000"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "sqrt_n,K,percentile" and len(lines) == 1 + 2 * 3


def test_star_trend(tmp_path):
    series = tmp_path / "series.csv"
    y = simulate_null_star(0.0, -0.001816, 40, seed=1)
    series.write_text("j,y\n" + "".join(f"{j + 1},{float(v)!r}\n" for j, v in enumerate(y)))
    out = tmp_path / "star.json"
    assert main(["star-trend", "--input", str(series), "--max-degree", "3", "--bootstrap", "100",
                 "--seed", "2", "--out", str(out)]) == 0
    rec = json.loads(out.read_text())
    assert len(rec["degrees"]) == 4
    assert 0 < rec["bootstrap"]["p_pi_bic"] <= 1


@pytest.mark.parametrize("argv", [
    ["test", "--input", "/nonexistent.csv"],
    ["simulate-critical", "--law", "nope"],
    ["type1-study", "--n", "3"],
])
def test_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("pibic: error:")


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert np.char.startswith(capsys.readouterr().out, "pibic")
