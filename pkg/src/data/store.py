"""Run directories: result tables, manifests and digests"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd
from pandera import DataFrameSchema
from pydantic import BaseModel, Field

from src import __version__
from src.data.contracts import CheckResult, RunConfig, validate_table
from src.errors import ArtifactMissingError

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.json"
METRICS_FILE = "metrics.prom"
VIOLATIONS_FILE = "violations.csv"
FLOAT_FORMAT = "%.17g"

# written per run but not part of the reproducible output
UNDIGESTED = {MANIFEST_FILE, METRICS_FILE, VIOLATIONS_FILE}

# fields that change where or how fast a run executes, not what it computes
NON_SEMANTIC_FIELDS = {"output_dir", "threads"}


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_digest(config: RunConfig) -> str:
    """sha256 over the fully-defaulted config minus non-semantic fields"""
    payload = config.model_dump(mode="json", exclude=NON_SEMANTIC_FIELDS)
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def result_digests(run_dir: Union[str, Path]) -> Dict[str, str]:
    """Digest of every result file in a run directory, by file name"""
    run_dir = Path(run_dir)
    return {
        p.name: file_digest(p)
        for p in sorted(run_dir.iterdir())
        if p.is_file() and p.name not in UNDIGESTED
    }


class CheckOutcome(BaseModel):
    """Pass/fail of one check with its numbers"""
    passed: bool
    numbers: Dict[str, Optional[float]] = Field(default_factory=dict)

    @classmethod
    def from_result(cls, result: CheckResult) -> "CheckOutcome":
        return cls(passed=result.passed, numbers=dict(result.numbers))


class RunManifest(BaseModel):
    """What a run was, what it produced and how its checks came out"""
    experiment: str = Field(..., description="Experiment kind")
    config_digest: str = Field(..., description="sha256 of the semantic config")
    seed: int = Field(..., description="Master seed")
    artifact_version: str = Field(__version__, description="Package version that produced the run")
    wall_time: float = Field(..., ge=0, description="Seconds spent in the experiment")
    run_dir: str = Field(..., description="Run directory")
    checks: Dict[str, CheckOutcome] = Field(default_factory=dict)
    files: Dict[str, str] = Field(default_factory=dict, description="sha256 per result file")

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())


class RunStore:
    """Append-only parent directory of run directories"""

    def __init__(self, output_dir: Union[str, Path]):
        self.root = Path(output_dir)

    def create_run_dir(self, experiment: str, digest: str) -> Path:
        """
        New directory `<experiment>-<digest12>-<n>` with the next free n

        Existing run directories are never reused.
        """
        self.root.mkdir(parents=True, exist_ok=True)
        prefix = f"{experiment}-{digest[:12]}-"
        taken = [
            int(p.name[len(prefix):])
            for p in self.root.glob(prefix + "*")
            if p.name[len(prefix):].isdigit()
        ]
        n = max(taken, default=-1) + 1
        while True:
            run_dir = self.root / f"{prefix}{n}"
            try:
                run_dir.mkdir()
                return run_dir
            except FileExistsError:
                n += 1

    def list_runs(self) -> List[Path]:
        if not self.root.exists():
            return []
        return sorted(p.parent for p in self.root.glob(f"*/{MANIFEST_FILE}"))


def write_table(run_dir: Path, name: str, df: pd.DataFrame, schema: DataFrameSchema) -> Path:
    """Validate and write one result table as CSV with exact floats"""
    df = validate_table(df, schema, name)
    path = run_dir / f"{name}.csv"
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_config(run_dir: Path, config: RunConfig) -> Path:
    """Fully-defaulted config without the output location"""
    path = run_dir / CONFIG_FILE
    path.write_text(config.model_dump_json(indent=2, exclude={"output_dir"}) + "\n")
    return path


def write_manifest(run_dir: Path, manifest: RunManifest) -> Path:
    path = run_dir / MANIFEST_FILE
    path.write_text(manifest.model_dump_json(indent=2) + "\n")
    logger.info("wrote manifest %s", path)
    return path


def load_manifest(path: Union[str, Path]) -> RunManifest:
    """
    Read a manifest file (or the manifest inside a run directory)

    Raises:
        ArtifactMissingError: No manifest at the path
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_FILE
    if not path.exists():
        raise ArtifactMissingError(f"manifest not found: {path}")
    return RunManifest.model_validate_json(path.read_text())
