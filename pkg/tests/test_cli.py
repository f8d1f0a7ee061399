"""Tests for run directories, replay, the check ledger and the command line"""

import json

import pandas as pd
import pytest

from src.cli import acceptance
from src.cli.acceptance import BUDGETS, CriterionResult, run_acceptance
from src.cli.main import EXIT_ERROR, EXIT_FAILED, EXIT_OK, main
from src.cli.runner import replay, run
from src.data.contracts import CheckKind, CheckResult, RunConfig
from src.data.store import MANIFEST_FILE, RunStore, config_digest, load_manifest
from src.data.violations import ViolationLogger
from src.errors import ArtifactMissingError


@pytest.fixture
def small_config(tmp_path):
    return RunConfig(
        experiment="simulate-pointproc",
        seed=3,
        paths=40,
        saved_paths=5,
        kernels=[{"kind": "hawkes", "rate": 1.0, "excitation_a": 0.5, "excitation_b": 1.0}],
        output_dir=str(tmp_path / "runs"),
    )


def test_digest_ignores_location_and_threads(small_config):
    """Where and how fast a run executes does not change its digest"""
    moved = small_config.model_copy(update={"output_dir": "elsewhere", "threads": 2})
    assert config_digest(moved) == config_digest(small_config)
    reseeded = small_config.model_copy(update={"seed": 4})
    assert config_digest(reseeded) != config_digest(small_config)


def test_run_directories_are_never_reused(tmp_path):
    """Each request gets the next free directory"""
    store = RunStore(tmp_path)
    first = store.create_run_dir("solve-forward", "a" * 64)
    second = store.create_run_dir("solve-forward", "a" * 64)
    assert first != second
    assert first.name.endswith("-0") and second.name.endswith("-1")


def test_run_writes_manifest_and_tables(small_config):
    """A run leaves config, tables, summary and a digest per result file"""
    run_dir, manifest = run(small_config)
    assert (run_dir / MANIFEST_FILE).exists()
    assert {"config.json", "events.csv", "counts.csv", "summary.csv", "summary.txt"} <= set(manifest.files)
    assert "violations.csv" not in manifest.files
    assert load_manifest(run_dir).config_digest == manifest.config_digest
    assert "time_rescaling_1" in manifest.checks
    events = pd.read_csv(run_dir / "events.csv")
    counts = pd.read_csv(run_dir / "counts.csv")
    assert set(counts["channel"]) == {1}
    assert events.empty or events["channel"].min() == 1


def test_replay_is_identical(small_config):
    """Re-running the stored config reproduces every result file"""
    run_dir, _ = run(small_config)
    verdict = replay(run_dir / MANIFEST_FILE)
    assert verdict.identical
    assert not verdict.config_changed
    assert verdict.replay_dir != run_dir


def test_replay_with_changed_seed_differs(small_config, tmp_path):
    """A different seed names the diverging files"""
    run_dir, _ = run(small_config)
    other = tmp_path / "other.json"
    other.write_text(small_config.model_copy(update={"seed": 99}).model_dump_json())
    verdict = replay(run_dir, other)
    assert not verdict.identical
    assert verdict.config_changed
    assert "events.csv" in verdict.differing


def test_replay_missing_result_file(small_config):
    """A deleted result file is reported before anything runs"""
    run_dir, _ = run(small_config)
    (run_dir / "counts.csv").unlink()
    with pytest.raises(ArtifactMissingError, match="counts.csv"):
        replay(run_dir)


def test_replay_missing_manifest(tmp_path):
    """No manifest, no replay"""
    with pytest.raises(ArtifactMissingError):
        replay(tmp_path / MANIFEST_FILE)


def test_violation_ledger(tmp_path):
    """Violations are appended and counted by check and kind"""
    ledger = ViolationLogger(str(tmp_path / "violations.csv"))
    assert ledger.get_violations() == []
    result = CheckResult("g_monotonicity")
    result.add_violation(CheckKind.MONOTONICITY, "operator inequality", worst_slack=-0.5)
    result.add_violation(CheckKind.TERMINAL_MONOTONICITY, "terminal inequality", worst_slack=-0.1)
    ledger.log_result(result)
    ledger.log_result(CheckResult("duality"))
    rows = ledger.get_violations(check="g_monotonicity")
    assert [r["kind"] for r in rows] == ["monotonicity", "terminal_monotonicity"]
    stats = ledger.get_violation_stats()
    assert stats["total_violations"] == 2
    assert stats["by_kind"] == {"monotonicity": 1, "terminal_monotonicity": 1}


def test_main_run_and_replay(small_config, tmp_path):
    """run then replay --json through the command line"""
    path = tmp_path / "config.json"
    path.write_text(small_config.model_dump_json())
    assert main(["run", str(path)]) in (EXIT_OK, EXIT_FAILED)
    run_dir = next((tmp_path / "runs").iterdir())
    assert main(["replay", str(run_dir), "--json"]) == EXIT_OK
    assert len(list((tmp_path / "runs").iterdir())) == 2


def test_main_reports_config_errors(tmp_path):
    """Configuration problems exit with the error code"""
    assert main(["run", str(tmp_path / "absent.json")]) == EXIT_ERROR
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"experiment": "nope", "seed": 0}))
    assert main(["run", str(bad)]) == EXIT_ERROR


def test_criterion_over_budget_fails():
    """A passing criterion that overruns its budget is reported as a failure"""
    result = CriterionResult(3, "G-monotonicity verifier", passed=True, runtime=6.0, budget=BUDGETS[3])
    result.enforce_budget()
    assert not result.passed
    assert "exceeds budget 5s" in result.detail


def test_criterion_within_budget_keeps_outcome():
    result = CriterionResult(2, "Decoupled oracle equivalence", passed=True, runtime=1.0, budget=BUDGETS[2])
    assert result.enforce_budget().passed
    assert result.detail == ""
    assert CriterionResult(9, "Determinism", passed=True, runtime=1e6).enforce_budget().passed


def test_acceptance_applies_budgets(monkeypatch):
    """run_acceptance attaches each criterion's budget and enforces it"""
    monkeypatch.setitem(acceptance.BUDGETS, 3, 0.0)
    (result,) = run_acceptance(quick=True, only=[3])
    assert result.budget == 0.0
    assert result.runtime > 0.0
    assert not result.passed
    assert "exceeds budget" in result.detail
