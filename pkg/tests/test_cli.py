"""Command line plumbing: each subcommand end to end in a temp tree.

The commands are exercised through CliRunner, so exit codes, stdout
text, and the one-line JSON error contract on stderr are all checked
exactly as a shell script would see them.
"""

import json
import textwrap

import pytest
from click.testing import CliRunner

from labelloop.cli import main

runner = CliRunner()


def write_config(path, mode="from_seed", max_loops=2, images=10):
    out = path.parent / "out"
    path.write_text(textwrap.dedent(f"""\
        [run]
        seed = 11
        mode = "{mode}"
        max_loops = {max_loops}

        [world]
        images = {images}
        objects_per_image = 4.0

        [paths]
        output = "{out}"
        """), encoding="utf-8")
    return path


def invoke(*args):
    return runner.invoke(main, [str(a) for a in args])


def stderr_error(result):
    """Parse the single canonical JSON failure line."""
    assert result.exit_code == 1
    lines = result.stderr.strip().splitlines()
    assert len(lines) == 1
    payload = json.loads(lines[0])
    assert set(payload) == {"error", "message"}
    return payload


@pytest.fixture
def seeded(tmp_path):
    """Config plus synthesized from-seed dataset."""
    cfg = write_config(tmp_path / "run.toml")
    data = tmp_path / "data"
    result = invoke("init", "--config", cfg, "--out", data)
    assert result.exit_code == 0
    return cfg, data


class TestInit:
    def test_from_seed_writes_world_and_seeds(self, seeded, tmp_path):
        _, data = seeded
        assert (data / "world.json").exists()
        seeds = json.loads((data / "seed_boxes.json").read_text())
        assert seeds["annotations"]

    def test_legacy_writes_boxes_dots_uncovered(self, tmp_path):
        cfg = write_config(tmp_path / "legacy.toml", mode="legacy_dots")
        data = tmp_path / "legacy"
        result = invoke("init", "--config", cfg, "--out", data)
        assert result.exit_code == 0
        for name in ("world.json", "legacy_boxes.json", "legacy_dots.csv",
                     "legacy_uncovered.json"):
            assert (data / name).exists(), name

    def test_bad_config_is_json_error(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text('[wrold]\nimages = 5\n', encoding="utf-8")
        result = invoke("init", "--config", bad, "--out", tmp_path / "x")
        payload = stderr_error(result)
        assert payload["error"] == "ConfigError"
        assert "wrold" in payload["message"]


class TestImports:
    def test_import_boxes_then_refuse_overwrite(self, seeded, tmp_path):
        _, data = seeded
        journal = tmp_path / "labels.jsonl"
        result = invoke("import-boxes", "--journal", journal,
                        "--boxes", data / "seed_boxes.json")
        assert result.exit_code == 0
        n = len(json.loads((data / "seed_boxes.json").read_text())["annotations"])
        assert f"imported {n} starter boxes" in result.stdout
        assert journal.exists()

        again = invoke("import-boxes", "--journal", journal,
                       "--boxes", data / "seed_boxes.json")
        payload = stderr_error(again)
        assert payload["error"] == "StoreError"
        assert "refusing" in payload["message"]

    def test_import_dots_appends(self, tmp_path):
        cfg = write_config(tmp_path / "legacy.toml", mode="legacy_dots")
        data = tmp_path / "legacy"
        assert invoke("init", "--config", cfg, "--out", data).exit_code == 0
        journal = tmp_path / "labels.jsonl"
        assert invoke("import-boxes", "--journal", journal,
                      "--boxes", data / "legacy_boxes.json").exit_code == 0
        before = len(journal.read_text().splitlines())
        result = invoke("import-dots", "--journal", journal,
                        "--dots", data / "legacy_dots.csv")
        assert result.exit_code == 0
        with open(data / "legacy_dots.csv", newline="") as fh:
            rows = sum(1 for _ in fh) - 1  # header
        assert f"imported {rows} dot proposals" in result.stdout
        assert len(journal.read_text().splitlines()) == before + rows


class TestRunReplayReport:
    @pytest.fixture
    def finished(self, seeded, tmp_path):
        cfg, _ = seeded
        run_dir = tmp_path / "run"
        result = invoke("run-sim", "--config", cfg, "--run-dir", run_dir,
                        "--run-seed", 3)
        assert result.exit_code == 0, result.stderr
        return run_dir, result

    def test_run_sim_artifacts_and_summary(self, finished):
        run_dir, result = finished
        for name in ("events.jsonl", "manifest.json", "world.json", "reports.csv"):
            assert (run_dir / name).exists(), name
        assert (run_dir / "reports" / "loop_1.json").exists()
        assert "loop 1: labels" in result.stdout
        assert "accepted" in result.stdout
        assert ("converged" in result.stdout
                or "loop budget exhausted" in result.stdout)

    def test_replay_verifies(self, finished):
        run_dir, _ = finished
        result = invoke("replay", "--run-dir", run_dir)
        assert result.exit_code == 0
        assert "replay ok" in result.stdout

    def test_replay_flags_tampering(self, finished):
        run_dir, _ = finished
        report = run_dir / "reports" / "loop_1.json"
        report.write_text(report.read_text().replace('"coverage":', '"coverage": '))
        result = invoke("replay", "--run-dir", run_dir)
        payload = stderr_error(result)
        assert payload["error"] == "ReplayMismatch"

    def test_report_table(self, finished):
        run_dir, _ = finished
        result = invoke("report", "--run-dir", run_dir)
        assert result.exit_code == 0
        lines = result.stdout.splitlines()
        assert "coverage" in lines[0] and "hits" in lines[0]
        n_reports = len(list((run_dir / "reports").glob("loop_*.json")))
        assert len(lines) == 1 + n_reports

    def test_report_without_reports_fails(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        result = invoke("report", "--run-dir", empty)
        payload = stderr_error(result)
        assert payload["error"] == "OrchestratorError"

    def test_legacy_run_smoke(self, tmp_path):
        cfg = write_config(tmp_path / "legacy.toml", mode="legacy_dots",
                           max_loops=1)
        run_dir = tmp_path / "legacy-run"
        result = invoke("run-sim", "--config", cfg, "--run-dir", run_dir)
        assert result.exit_code == 0, result.stderr
        assert "loop 0: labels" in result.stdout


class TestExport:
    def test_export_settled_boxes(self, finished_export_setup):
        run_dir, out = finished_export_setup
        result = invoke("export", "--journal", run_dir / "events.jsonl",
                        "--out", out)
        assert result.exit_code == 0
        document = json.loads(out.read_text())
        assert set(document) >= {"annotations", "categories", "images"}
        assert len(document["annotations"]) > 0
        assert f"exported {len(document['annotations'])} boxes" in result.stdout

    def test_unknown_state_fails(self, finished_export_setup):
        run_dir, out = finished_export_setup
        result = invoke("export", "--journal", run_dir / "events.jsonl",
                        "--out", out, "--states", "bogus")
        payload = stderr_error(result)
        assert payload["error"] == "StoreError"
        assert "bogus" in payload["message"]

    def test_empty_state_selection_fails(self, finished_export_setup):
        run_dir, out = finished_export_setup
        result = invoke("export", "--journal", run_dir / "events.jsonl",
                        "--out", out, "--states", " , ")
        payload = stderr_error(result)
        assert "selected nothing" in payload["message"]


@pytest.fixture
def finished_export_setup(tmp_path):
    cfg = write_config(tmp_path / "run.toml", max_loops=1)
    data = tmp_path / "data"
    assert invoke("init", "--config", cfg, "--out", data).exit_code == 0
    run_dir = tmp_path / "run"
    result = invoke("run-sim", "--config", cfg, "--run-dir", run_dir)
    assert result.exit_code == 0, result.stderr
    return run_dir, tmp_path / "export.json"
