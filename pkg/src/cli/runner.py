"""Seeded runs into append-only run directories, and replay against a manifest"""

import contextlib
import logging
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits

from src.cli.experiments import ExperimentResult, run_experiment
from src.data.contracts import SUMMARY_SCHEMA, RunConfig, load_config
from src.data.store import (
    CONFIG_FILE,
    METRICS_FILE,
    VIOLATIONS_FILE,
    CheckOutcome,
    RunManifest,
    RunStore,
    config_digest,
    load_manifest,
    result_digests,
    write_config,
    write_manifest,
    write_table,
)
from src.data.violations import ViolationLogger
from src.errors import ArtifactMissingError, LabError
from src.monitoring.metrics import MetricsCollector

logger = logging.getLogger(__name__)


def thread_cap(threads: Optional[int]):
    """Cap BLAS/OpenMP pools for the duration of a run"""
    return threadpool_limits(limits=threads) if threads else contextlib.nullcontext()


def failing_module(exc: BaseException) -> str:
    """Dotted module of the innermost frame that raised"""
    frames = traceback.extract_tb(exc.__traceback__)
    if not frames:
        return "unknown"
    path = Path(frames[-1].filename)
    parts = path.with_suffix("").parts
    return ".".join(parts[parts.index("src"):]) if "src" in parts else path.stem


def summary_text(config: RunConfig, result: ExperimentResult) -> str:
    """Human-readable summary; contains nothing run-dependent"""
    lines = [f"experiment: {config.experiment.value}", f"seed: {config.seed}", "", "checks:"]
    for name in sorted(result.checks):
        check = result.checks[name]
        lines.append(f"  {name}: {'pass' if check.passed else 'FAIL'}")
        for v in check.violations:
            lines.append(f"    {v['kind']}: {v['reason']}")
    lines.extend(["", "summary:"])
    for key in sorted(result.summary):
        lines.append(f"  {key}: {result.summary[key]:.10g}")
    return "\n".join(lines) + "\n"


def _write_results(run_dir: Path, config: RunConfig, result: ExperimentResult) -> None:
    write_config(run_dir, config)
    for name, df, schema in result.tables:
        write_table(run_dir, name, df, schema)
    keys = sorted(result.summary)
    summary = pd.DataFrame({
        "metric": keys,
        "value": np.array([result.summary[k] for k in keys], dtype=float),
    })
    write_table(run_dir, "summary", summary, SUMMARY_SCHEMA)
    (run_dir / "summary.txt").write_text(summary_text(config, result))


def run(config: RunConfig) -> Tuple[Path, RunManifest]:
    """
    Execute one configured experiment into a fresh run directory

    Writes the fully-defaulted config, the result tables, summary.csv,
    summary.txt, the check ledger, metrics.prom and manifest.json. The
    same (config, seed) gives byte-identical result files.

    Raises:
        LabError: Failures of the experiment, logged with the failing module
    """
    digest = config_digest(config)
    run_dir = RunStore(config.output_dir).create_run_dir(config.experiment.value, digest)
    metrics = MetricsCollector()
    ledger = ViolationLogger(str(run_dir / VIOLATIONS_FILE))

    start = time.perf_counter()
    with thread_cap(config.threads):
        try:
            result = run_experiment(config, metrics)
        except LabError as e:
            logger.error("%s failed in %s: %s", config.experiment.value, failing_module(e), e)
            raise
    wall = time.perf_counter() - start

    _write_results(run_dir, config, result)
    for check in result.checks.values():
        ledger.log_result(check)
    stats = ledger.get_violation_stats()
    if stats["total_violations"]:
        logger.warning("%d check violations: %s", stats["total_violations"], stats["by_check"])
    metrics.write(run_dir / METRICS_FILE)

    manifest = RunManifest(
        experiment=config.experiment.value,
        config_digest=digest,
        seed=config.seed,
        wall_time=wall,
        run_dir=str(run_dir),
        checks={name: CheckOutcome.from_result(c) for name, c in sorted(result.checks.items())},
        files=result_digests(run_dir),
    )
    write_manifest(run_dir, manifest)
    logger.info("run %s finished in %.2fs: %s", run_dir.name, wall, "pass" if manifest.passed else "FAIL")
    return run_dir, manifest


@dataclass
class ReplayVerdict:
    """Outcome of re-running a manifest's config"""
    original_dir: Path
    replay_dir: Path
    differing: List[str] = field(default_factory=list)
    config_changed: bool = False

    @property
    def identical(self) -> bool:
        return not self.differing

    def to_dict(self) -> Dict[str, object]:
        return {
            "identical": self.identical,
            "original_dir": str(self.original_dir),
            "replay_dir": str(self.replay_dir),
            "differing": list(self.differing),
            "config_changed": self.config_changed,
        }


def replay(manifest_path: Union[str, Path], config_path: Optional[Union[str, Path]] = None) -> ReplayVerdict:
    """
    Re-run a manifest's experiment and compare result digests

    The replay lands in a new run directory next to the original. With
    `config_path` the stored config is replaced, which names every result
    file that diverges.

    Raises:
        ArtifactMissingError: Manifest, config or a recorded result file is missing
    """
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    run_dir = manifest_path if manifest_path.is_dir() else manifest_path.parent
    missing = [name for name in manifest.files if not (run_dir / name).exists()]
    if missing:
        raise ArtifactMissingError(f"result files missing from {run_dir}: {', '.join(missing)}")

    source = Path(config_path) if config_path is not None else run_dir / CONFIG_FILE
    if not source.exists():
        raise ArtifactMissingError(f"config not found: {source}")
    config = load_config(source).model_copy(update={"output_dir": str(run_dir.parent)})

    replay_dir, replayed = run(config)
    names = sorted(set(manifest.files) | set(replayed.files))
    differing = [n for n in names if manifest.files.get(n) != replayed.files.get(n)]
    verdict = ReplayVerdict(
        original_dir=run_dir,
        replay_dir=replay_dir,
        differing=differing,
        config_changed=replayed.config_digest != manifest.config_digest,
    )
    if verdict.identical:
        logger.info("replay of %s is identical", run_dir.name)
    else:
        logger.warning("replay of %s differs in %s", run_dir.name, ", ".join(differing))
    return verdict
