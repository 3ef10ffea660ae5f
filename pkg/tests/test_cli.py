"""Command-line surface: argument handling, exit codes, artifacts."""

import csv

from catm_sim.cli import main


def scenario_file(tmp_path, text):
    p = tmp_path / "scenario.yaml"
    p.write_text(text)
    return str(p)


class TestScenarioRuns:
    def test_artifacts_written(self, tmp_path, capsys):
        path = scenario_file(tmp_path, (
            "name: clidemo\nseed: 7\nduration_ms: 4000\n"
            "layout: {sectors_per_site: 1}\n"
            "traffic:\n  - {kind: full_buffer, count: 1, direction: ul}\n"))
        out = tmp_path / "out"
        assert main([path, "--out", str(out)]) == 0
        assert (out / "kpi.csv").exists()
        assert (out / "summary.json").exists()
        with open(out / "kpi.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert int(rows[0]["delivered_packets"]) > 0
        assert "packet conservation: ok" in capsys.readouterr().out

    def test_trace_flag_adds_traces(self, tmp_path):
        path = scenario_file(tmp_path, (
            "duration_ms: 2000\nlayout: {sectors_per_site: 1}\n"
            "traffic: [{kind: full_buffer, count: 1}]\n"))
        out = tmp_path / "out"
        assert main([path, "--out", str(out), "--trace"]) == 0
        assert (out / "power_trace.csv").exists()
        assert (out / "grid_trace.csv").exists()

    def test_seed_and_duration_overrides(self, tmp_path):
        path = scenario_file(tmp_path, "duration_ms: 99999\n")
        out = tmp_path / "out"
        assert main([path, "--out", str(out),
                     "--seed", "5", "--duration", "1000"]) == 0
        import json
        summary = json.loads((out / "summary.json").read_text())
        assert summary["duration_ms"] == 1000
        assert summary["scenario"]["seed"] == 5


class TestExitCodes:
    def test_missing_file_is_config_error(self, tmp_path, capsys):
        assert main([str(tmp_path / "nope.yaml")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_unknown_key_is_config_error(self, tmp_path, capsys):
        path = scenario_file(tmp_path, "wheels: 4\n")
        assert main([path]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_scenario_and_preset_are_exclusive(self, tmp_path, capsys):
        path = scenario_file(tmp_path, "")
        assert main([path, "--preset", "table2"]) == 2
        assert main([]) == 2


class TestPresetRuns:
    def test_table2_preset_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["--preset", "table2", "--out", str(out)]) == 0
        with open(out / "table2.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["rl_pusch"]) for r in rows] == [8, 16, 32]
        assert "mcl_db" in capsys.readouterr().out

    def test_fig4b_preset_seeds_flag(self, tmp_path):
        out = tmp_path / "out"
        assert main(["--preset", "fig4b", "--seeds", "1,2",
                     "--duration", "5000", "--out", str(out)]) == 0
        with open(out / "fig4b.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4    # {olpc, clpc} x {1, 2}
