"""Tests for run configuration, check results and result-table contracts"""

import json

import pandas as pd
import pytest
from pydantic import ValidationError

from src.data.contracts import (
    COUNTS_SCHEMA,
    EVENTS_SCHEMA,
    CheckKind,
    CheckResult,
    ExperimentKind,
    KernelConfig,
    RunConfig,
    SolverSettings,
    load_config,
    validate_table,
)
from src.errors import ConfigError


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return path


def test_minimal_config_is_fully_defaulted(tmp_path):
    """Only experiment and seed are required"""
    config = load_config(write_json(tmp_path / "c.json", {"experiment": "reproduce-lq", "seed": 1}))
    assert config.experiment == ExperimentKind.REPRODUCE_LQ
    assert config.steps == 50
    assert config.solver.eps_min == pytest.approx(1.0 / 1024)
    assert config.basis_dimension == 6


def test_missing_file(tmp_path):
    """A missing config file is a configuration error"""
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.json")


def test_unknown_field_is_named(tmp_path):
    """Unknown top-level fields are rejected by name"""
    path = write_json(tmp_path / "c.json", {"experiment": "solve-forward", "seed": 1, "bogus": 3})
    with pytest.raises(ConfigError, match="bogus"):
        load_config(path)


def test_field_errors_carry_location(tmp_path):
    """Nested field errors are reported as loc: msg"""
    path = write_json(tmp_path / "c.json", {"experiment": "solve-forward", "seed": 1, "solver": {"picard_tol": -1}})
    with pytest.raises(ConfigError, match="solver.picard_tol"):
        load_config(path)


def test_paths_below_basis_dimension(tmp_path):
    """Regression experiments need at least as many paths as basis functions"""
    path = write_json(tmp_path / "c.json", {"experiment": "reproduce-lq", "seed": 1, "paths": 5})
    with pytest.raises(ConfigError, match="basis dimension 6"):
        load_config(path)


def test_paths_unconstrained_for_simulation():
    """Point-process runs do not regress"""
    config = RunConfig(experiment="simulate-pointproc", seed=0, paths=2)
    assert config.paths == 2


def test_eps_min_above_eps_init():
    """eps_min may not exceed eps_init"""
    with pytest.raises(ValidationError):
        SolverSettings(eps_init=0.1, eps_min=0.2)


def test_kernel_mark_law():
    """Mark probabilities must match marks and sum to one"""
    with pytest.raises(ValidationError):
        KernelConfig(marks=[1.0, 2.0], mark_probs=[0.5])
    with pytest.raises(ValidationError):
        KernelConfig(marks=[1.0, 2.0], mark_probs=[0.5, 0.6])


def test_regime_kernel_needs_square_matrix():
    """Regime kernels carry a square generator"""
    with pytest.raises(ValidationError):
        KernelConfig(kind="regime")
    with pytest.raises(ValidationError):
        KernelConfig(kind="regime", rate_matrix=[[-1.0, 1.0]])
    with pytest.raises(ValidationError):
        KernelConfig(kind="regime", rate_matrix=[[-1.0, 1.0], [1.0, -1.0]], rate_on_mean=[[0.0, 1.0], [1.0, 0.0]])


def test_regime_indicators_enter_basis():
    """Each extra regime state adds one basis column"""
    config = RunConfig(
        experiment="solve-backward", seed=0,
        kernels=[KernelConfig(kind="regime", rate_matrix=[[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0], [1.0, 0.0, -1.0]])],
    )
    assert config.basis_dimension == 8


def test_check_result_records_violation():
    """A violation flips the result and carries its kind"""
    result = CheckResult("duality", numbers={"gap": 0.3})
    assert result.passed
    result.add_violation(CheckKind.DUALITY, "gap too large", worst_slack=-0.1)
    assert not result.passed
    entry = result.violations[0]
    assert entry["check"] == "duality"
    assert entry["kind"] == "duality"
    assert entry["worst_slack"] == pytest.approx(-0.1)


def test_event_table_contract():
    """Event times are positive"""
    good = pd.DataFrame({"path": [0], "time": [0.5], "channel": [1], "mark": [1.0]})
    assert len(validate_table(good, EVENTS_SCHEMA, "events")) == 1
    bad = good.assign(time=[0.0])
    with pytest.raises(ValueError, match="events"):
        validate_table(bad, EVENTS_SCHEMA, "events")


def test_tables_number_channels_from_one():
    """Channel 0 is not a valid record"""
    events = pd.DataFrame({"path": [0], "time": [0.5], "channel": [0], "mark": [1.0]})
    with pytest.raises(ValueError, match="events"):
        validate_table(events, EVENTS_SCHEMA, "events")
    counts = pd.DataFrame({"path": [0], "channel": [0], "count": [3]})
    with pytest.raises(ValueError, match="counts"):
        validate_table(counts, COUNTS_SCHEMA, "counts")


def test_count_table_contract():
    """Counts are nonnegative"""
    bad = pd.DataFrame({"path": [0], "channel": [1], "count": [-1]})
    with pytest.raises(ValueError):
        validate_table(bad, COUNTS_SCHEMA, "counts")
