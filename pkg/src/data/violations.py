"""Check ledger: one CSV row per structural check violation"""

import csv
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from src.data.contracts import CheckResult

FIELDS = ["timestamp", "check", "kind", "reason", "worst_slack", "severity"]


class ViolationLogger:
    """Append-only ledger of check violations for one run"""

    def __init__(self, violations_file: str = "violations.csv"):
        """
        Args:
            violations_file: CSV path; created with its header if absent
        """
        self.violations_path = Path(violations_file)
        if not self.violations_path.exists():
            self.violations_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.violations_path, 'w', newline='') as f:
                csv.DictWriter(f, fieldnames=FIELDS).writeheader()

    def log_result(self, result: CheckResult):
        """Append every violation recorded on a check result"""
        if not result.violations:
            return
        with open(self.violations_path, 'a', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=FIELDS)
            for entry in result.violations:
                row = {name: entry.get(name, "") for name in FIELDS}
                row["timestamp"] = row["timestamp"] or datetime.now().isoformat()
                row["check"] = row["check"] or result.check
                writer.writerow(row)

    def _frame(self) -> pd.DataFrame:
        if not self.violations_path.exists():
            return pd.DataFrame(columns=FIELDS)
        return pd.read_csv(self.violations_path, dtype={"check": str, "kind": str, "reason": str, "severity": str})

    def get_violations(self, check: Optional[str] = None, limit: int = 1000) -> List[Dict[str, Any]]:
        """
        Ledger rows, oldest first

        Args:
            check: Only rows of this check
            limit: Maximum number of rows
        """
        df = self._frame()
        if check:
            df = df[df["check"] == check]
        return df.head(limit).to_dict(orient="records")

    def get_violation_stats(self) -> Dict[str, Any]:
        """Row count with counts per check and per kind"""
        df = self._frame()
        return {
            "total_violations": int(len(df)),
            "by_check": {str(k): int(v) for k, v in df["check"].value_counts(sort=False).items()},
            "by_kind": {str(k): int(v) for k, v in df["kind"].value_counts(sort=False).items()},
        }
