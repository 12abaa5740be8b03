import csv
import json

import numpy as np
import pytest

import stagsynth as ss
from stagsynth.cli import main
from conftest import make_panel


@pytest.fixture
def panel_csv(tmp_path):
    panel = make_panel(8, 14, (7, 9, 9), seed=1, scale=0.1)
    path = tmp_path / "panel.csv"
    ss.write_panel(panel, path)
    return path


def run(args):
    return main([str(a) for a in args])


class TestFit:
    def test_artifacts_written(self, panel_csv, tmp_path):
        out = tmp_path / "out"
        code = run(["fit", "--input", panel_csv, "--output-dir", out,
                    "--nu", "0.5", "--inference", "wild_bootstrap",
                    "--bootstrap", "200", "--seed", "3"])
        assert code == 0
        for name in ("fit.json", "effects.csv", "balance.json",
                     "inference.json", "effects.json"):
            assert (out / name).exists()
        payload = json.loads((out / "fit.json").read_text())
        assert payload["run_config"]["command"] == "fit"
        assert payload["fit"]["hyperparameters"]["nu"] == 0.5

    def test_effects_csv_schema(self, panel_csv, tmp_path):
        out = tmp_path / "out"
        assert run(["fit", "--input", panel_csv, "--output-dir", out,
                    "--nu", "0.5"]) == 0
        with open(out / "effects.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["event_time", "att", "n_units"]
        assert len(rows) > 2

    def test_deterministic_outputs(self, panel_csv, tmp_path):
        out = tmp_path / "a"
        args = ["fit", "--input", panel_csv, "--output-dir", out, "--nu",
                "0.5", "--intercept", "--inference", "wild_bootstrap",
                "--bootstrap", "300", "--seed", "7"]
        assert run(args) == 0
        first = {name: (out / name).read_bytes()
                 for name in ("fit.json", "inference.json", "effects.csv")}
        assert run(args) == 0
        for name, payload in first.items():
            assert (out / name).read_bytes() == payload

    def test_data_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("unit,time,outcome,treat_time\n"
                       "A,1,1.0,2\nA,2,1.5,2\nB,1,2.0,2\nB,2,2.5,2\n")
        code = run(["fit", "--input", bad, "--output-dir", tmp_path / "o"])
        assert code == 1

    def test_config_error_exit_code(self, panel_csv, tmp_path):
        code = run(["fit", "--input", panel_csv,
                    "--output-dir", tmp_path / "o", "--nu", "1.7"])
        assert code == 2

    def test_config_file_merging(self, panel_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"nu": 0.25, "intercept": True}))
        out = tmp_path / "out"
        assert run(["fit", "--input", panel_csv, "--output-dir", out,
                    "--config", cfg]) == 0
        payload = json.loads((out / "fit.json").read_text())
        assert payload["fit"]["hyperparameters"]["nu"] == 0.25

    def test_version_notes(self, capsys):
        assert main(["--version"]) == 0
        text = capsys.readouterr().out
        assert "stagsynth" in text
        assert "basic orientation" in text


class TestOtherCommands:
    def test_frontier_row_count(self, panel_csv, tmp_path):
        out = tmp_path / "out"
        assert run(["frontier", "--input", panel_csv, "--output-dir", out,
                    "--grid", "5"]) == 0
        with open(out / "frontier.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["nu", "q_sep", "q_pool", "q_sep_norm",
                           "q_pool_norm", "att"]
        assert len(rows) - 1 == 5 + 2  # interior grid plus forced endpoints

    def test_placebo_shifts(self, panel_csv, tmp_path):
        for shift in (2, 4):
            out = tmp_path / f"p{shift}"
            assert run(["placebo", "--input", panel_csv, "--output-dir", out,
                        "--shift", shift, "--nu", "0.5"]) == 0
            payload = json.loads((out / "placebo.json").read_text())
            assert payload["run_config"]["shift"] == shift

    def test_trim(self, panel_csv, tmp_path):
        out = tmp_path / "out"
        assert run(["trim", "--input", panel_csv, "--output-dir", out,
                    "--drop", "1", "--nu", "0.5"]) == 0
        payload = json.loads((out / "trim.json").read_text())
        assert len(payload["dropped"]) == 1

    def test_simulate_report_shape(self, tmp_path):
        out = tmp_path / "sim"
        assert run(["simulate", "--dgp", "twfe", "--reps", "2", "--seed",
                    "1", "--output-dir", out, "--coverage",
                    "--bootstrap", "200"]) == 0
        payload = json.loads((out / "mc_report.json").read_text())
        cov = payload["reports"]["scm_heuristic"]["coverage_k"]
        assert len(cov) == 10
        assert (out / "replicates.csv").exists()

    def test_missing_command_prints_help(self, capsys):
        assert main([]) == 2
