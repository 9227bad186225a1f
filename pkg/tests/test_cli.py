import json
import os

import pandas as pd
import pytest

from src import cli
from src.errors import SimulationAborted, StepSizeError
from src.models.trace import SimTrace
from src.pipeline.export import TRACE_COLUMNS
from src.pipeline.suite import CriterionResult, SuiteReport


@pytest.fixture
def run_cli(patient_file, scenario_file):
    def _run(command, out, *extra, scenario="induction"):
        argv = [command, "--patient", patient_file, "--scenario", scenario_file(scenario),
                "--out", str(out), *extra]
        return cli.main(argv)
    return _run


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


class TestRun:
    def test_writes_trace_metrics_and_echo(self, run_cli, tmp_path):
        out = tmp_path / "run"
        assert run_cli("run", out, "--set", "duration_min=1") == 0
        frame = pd.read_csv(out / "trace.csv")
        assert list(frame.columns) == TRACE_COLUMNS
        assert len(frame) == 11
        assert (out / "metrics.json").exists()
        echo = read_json(out / "config.json")
        assert echo["seed"] == 0
        assert echo["overrides"] == ["duration_min=1"]
        assert echo["scenario"]["duration_min"] == 1.0

    def test_creates_nested_output_dir(self, run_cli, tmp_path):
        out = tmp_path / "a" / "b" / "c"
        assert run_cli("run", out, "--set", "duration_min=0.2") == 0
        assert (out / "trace.csv").exists()

    def test_override_is_echoed(self, run_cli, tmp_path):
        out = tmp_path / "run"
        code = run_cli("run", out, "--set", "duration_min=0.2", "--set", "controller.mode.count=1000")
        assert code == 0
        assert read_json(out / "config.json")["scenario"]["controller"]["mode"]["count"] == 1000
        assert set(pd.read_csv(out / "trace.csv")["solver_iterations"]) == {1000}

    def test_missing_patient_file(self, scenario_file, tmp_path, capsys):
        missing = str(tmp_path / "ghost_patient.json")
        code = cli.main(["run", "--patient", missing, "--scenario", scenario_file("induction"),
                         "--out", str(tmp_path / "out")])
        assert code == 3
        assert "ghost_patient.json" in capsys.readouterr().err

    def test_unknown_override_key(self, run_cli, tmp_path):
        assert run_cli("run", tmp_path / "out", "--set", "controller.mode.iters=3") == 3

    def test_invalid_scenario_json(self, patient_file, tmp_path):
        broken = tmp_path / "broken.json"
        broken.write_text("{", encoding="utf-8")
        code = cli.main(["run", "--patient", patient_file, "--scenario", str(broken),
                         "--out", str(tmp_path / "out")])
        assert code == 3

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            cli.main(["fly"])
        assert info.value.code == 2

    def test_same_seed_byte_identical(self, run_cli, tmp_path):
        extra = ("--set", "duration_min=0.5", "--set", "measurement_noise_std=2", "--seed", "4")
        assert run_cli("run", tmp_path / "first", *extra) == 0
        assert run_cli("run", tmp_path / "second", *extra) == 0
        first = (tmp_path / "first" / "trace.csv").read_bytes()
        assert first == (tmp_path / "second" / "trace.csv").read_bytes()

    def test_config_echo_reproduces_run(self, run_cli, tmp_path):
        original = tmp_path / "original"
        assert run_cli("run", original, "--set", "duration_min=0.5",
                       "--set", "measurement_noise_std=1.5", "--seed", "9") == 0
        rerun = tmp_path / "rerun"
        assert cli.main(["run", "--config", str(original / "config.json"), "--out", str(rerun)]) == 0
        assert (original / "trace.csv").read_bytes() == (rerun / "trace.csv").read_bytes()
        assert read_json(rerun / "config.json")["seed"] == 9

    def test_solver_failure_exit_code(self, run_cli, tmp_path, monkeypatch):
        def diverging(profile, scenario, seed=0):
            raise SimulationAborted(StepSizeError("cost keeps growing", gamma=1.0), SimTrace("aborted"))

        monkeypatch.setattr(cli, "run_scenario", diverging)
        out = tmp_path / "out"
        assert run_cli("run", out) == 4
        assert list(pd.read_csv(out / "trace.csv").columns) == TRACE_COLUMNS


class TestCompareIterations:
    def test_single_count_matches_run(self, run_cli, tmp_path):
        assert run_cli("run", tmp_path / "run", "--set", "duration_min=0.5") == 0
        assert run_cli("compare-iterations", tmp_path / "cmp", "--set", "duration_min=0.5",
                       "--counts", "50") == 0
        run_bytes = (tmp_path / "run" / "trace.csv").read_bytes()
        assert (tmp_path / "cmp" / "trace_50.csv").read_bytes() == run_bytes

    def test_combined_csv_keyed_by_count(self, run_cli, tmp_path):
        out = tmp_path / "cmp"
        assert run_cli("compare-iterations", out, "--set", "duration_min=0.3", "--counts", "1", "5") == 0
        frame = pd.read_csv(out / "compare_iterations.csv")
        assert list(frame.columns) == ["count"] + TRACE_COLUMNS
        assert frame.groupby("count").size().to_dict() == {1: 4, 5: 4}
        assert set(read_json(out / "metrics_compare.json")) == {"1", "5"}

    def test_duplicate_counts(self, run_cli, tmp_path):
        assert run_cli("compare-iterations", tmp_path / "cmp", "--counts", "10", "10") == 3


class TestSuite:
    def test_failed_criterion_exit_code(self, run_cli, tmp_path, monkeypatch):
        report = SuiteReport([
            CriterionResult("A1", "Rise time", True, 3.2, 4.0),
            CriterionResult("A4", "Disturbance rejection", False, {"settling_min": [2.5]}, 2.0),
        ])
        monkeypatch.setattr(cli, "run_suite", lambda profile, scenario, seed, workers: report)
        out = tmp_path / "suite"
        assert run_cli("suite", out) == 1
        written = read_json(out / "suite_report.json")
        assert written["passed"] is False
        assert [c["id"] for c in written["criteria"]] == ["A1", "A4"]

    def test_all_passed(self, run_cli, tmp_path, monkeypatch):
        report = SuiteReport([CriterionResult("A11", "BIS surface sanity", True, {}, 1e-12)])
        monkeypatch.setattr(cli, "run_suite", lambda profile, scenario, seed, workers: report)
        assert run_cli("suite", tmp_path / "suite") == 0
        assert os.path.isfile(tmp_path / "suite" / "config.json")
