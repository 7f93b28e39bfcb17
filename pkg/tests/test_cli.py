import csv
import json
import subprocess
import sys

import pytest

from boolperc.cli import (
    EXIT_BUDGET,
    EXIT_CONFIG,
    EXIT_OK,
    PLOT_COLUMNS,
    RESULT_COLUMNS,
    ConfigError,
    emit_plot_data,
    main,
    parse_grid,
    parse_measure,
)
from boolperc.estimators import PHI_C_DISKS_2D, limit_curve
from boolperc.measures import RadiusMeasure


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_grid():
    assert parse_grid("0.1:0.9:0.1") == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    assert parse_grid("4,8,16") == [4.0, 8.0, 16.0]
    with pytest.raises(ConfigError):
        parse_grid("1:0:0.1")


def test_parse_measure_forms():
    assert parse_measure("delta:1") == RadiusMeasure.delta(1.0)
    assert parse_measure("delta:2:0.5") == RadiusMeasure.delta(2.0, 0.5)
    assert parse_measure("atoms:1@0.3,2@0.1") == RadiusMeasure.atomic([(1.0, 0.3), (2.0, 0.1)])
    assert parse_measure("pareto:1:4") == RadiusMeasure.pareto(1.0, 4.0)
    assert parse_measure("uniform:0.5:1") == RadiusMeasure.uniform(0.5, 1.0)
    mu = RadiusMeasure.atomic([(1.0, 0.3)])
    assert parse_measure(json.dumps(mu.to_json())) == mu
    with pytest.raises(ConfigError):
        parse_measure("delta:-1")
    with pytest.raises(ConfigError):
        parse_measure("pareto:1")


def test_crossing_outputs_and_determinism(tmp_path):
    args = ["crossing", "--lambda", "0.3", "--a-grid", "4,8", "--n", "30", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "x")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "y")]) == EXIT_OK
    x = (tmp_path / "x" / "results.csv").read_text()
    assert x == (tmp_path / "y" / "results.csv").read_text()
    rows = read(tmp_path / "x" / "results.csv")
    assert [r["a"] for r in rows] == ["4.0", "8.0"]
    assert all(float(r["ci_lo"]) <= float(r["p_hat"]) <= float(r["ci_hi"]) for r in rows)
    mx = json.loads((tmp_path / "x" / "manifest.json").read_text())
    my = json.loads((tmp_path / "y" / "manifest.json").read_text())
    assert mx["config_hash"] == my["config_hash"] and mx["seed"] == 3
    assert {"started", "finished", "wall_time", "config"} <= set(mx)


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BOOLPERC_SEED", "11")
    assert main(["crossing", "--lambda", "0.3", "--a", "4", "--n", "5", "--out", str(tmp_path)]) == EXIT_OK
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["seed"] == 11 and m["seed_source"] == "BOOLPERC_SEED"
    assert read(tmp_path / "results.csv")[0]["seed"] == "11"


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"subcommand": "crossing", "lambda": 0.3, "a": 4, "n": 5, "seed": 2}))
    assert main(["crossing", "--config", str(cfg), "--n", "7", "--out", str(tmp_path / "o")]) == EXIT_OK
    assert read(tmp_path / "o" / "results.csv")[0]["n"] == "7"


@pytest.mark.parametrize(
    "args",
    [
        ["crossing", "--d", "1", "--lambda", "0.3", "--a", "4"],
        ["crossing", "--measure", "nonsense", "--lambda", "0.3", "--a", "4"],
        ["crossing", "--a", "4"],
        ["crossing", "--lambda", "-1", "--a", "4"],
        ["two-scale", "--alphas", "0.5"],
        ["two-scale", "--rho", "2", "--alphas", "1.5"],
        ["multiscale-scan", "--lambda", "0.1", "--rho", "2", "--levels", "auto", "--a-grid", "4"],
    ],
)
def test_config_errors(tmp_path, args):
    assert main(args + ["--out", str(tmp_path)]) == EXIT_CONFIG


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"subcommand": "crossing", "lamda": 0.3}))
    assert main(["crossing", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_two_scale_columns_and_emit_plot(tmp_path):
    out = tmp_path / "ts"
    status = main(["two-scale", "--rho", "2", "--alphas", "0.5", "--a-grid", "2,4", "--n", "40", "--out", str(out)])
    assert status in (EXIT_OK, EXIT_BUDGET)
    with open(out / "results.csv") as fh:
        header = fh.readline().strip().split(",")
    assert header == RESULT_COLUMNS + ["phi_limit"]
    (row,) = read(out / "results.csv")
    assert float(row["phi_limit"]) == pytest.approx(limit_curve(0.5))
    plot = tmp_path / "plot"
    assert main(["emit-plot", "--results", str(out / "results.csv"), "--out", str(plot)]) == EXIT_OK
    rows = read(plot / "plot_data.csv")
    assert [r["rho_or_inf"] for r in rows] == ["2.0", "inf"]
    assert float(rows[1]["phi"]) == pytest.approx(1 - (1 - PHI_C_DISKS_2D) ** 2)


def test_emit_plot_empty(tmp_path):
    assert main(["emit-plot", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "plot_data.csv").read_text() == ",".join(PLOT_COLUMNS) + "\n"
    assert emit_plot_data([]) == []


def test_verify_report(tmp_path):
    assert main(["verify", "--suite", "one_arm_inclusion,measure_identities", "--n", "10", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    assert [r["check"] for r in report] == ["one_arm_inclusion", "measure_identities"]
    assert all({"check", "samples", "violations", "params", "seed"} <= set(r) for r in report)
    assert main(["verify", "--suite", "nope", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_threshold_and_other_commands(tmp_path):
    status = main(["threshold", "--a-grid", "4,8", "--n", "60", "--out", str(tmp_path / "t")])
    assert status in (EXIT_OK, EXIT_BUDGET)
    (row,) = read(tmp_path / "t" / "results.csv")
    assert 0 < float(row["lambda_lo"]) < float(row["lambda_hi"])
    assert main(["one-arm", "--lambda", "0.3", "--a", "8", "--n", "10", "--out", str(tmp_path / "o")]) == EXIT_OK
    assert main(["covered-volume", "--lambda", "0.3", "--a", "6", "--n", "5", "--out", str(tmp_path / "c")]) == EXIT_OK
    assert main(["diameter-probe", "--lambda", "0.1", "--a-grid", "2,4", "--n", "5", "--out", str(tmp_path / "d")]) == EXIT_OK
    scan = ["multiscale-scan", "--lambda", "0.1", "--rho", "2", "--levels", "1", "--a-grid", "4", "--n", "5"]
    assert main(scan + ["--out", str(tmp_path / "m")]) == EXIT_OK
    assert len(read(tmp_path / "m" / "results.csv")) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "boolperc", "crossing", "--lambda", "0.2", "--a", "4", "--n", "3", "--out", str(tmp_path)],
        capture_output=True,
    )
    assert res.returncode == 0 and (tmp_path / "results.csv").exists()
