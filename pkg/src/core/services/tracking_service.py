import os
import json
import math
import logging
import pandas as pd
from typing import List, Dict, Optional, Any

from src.core.models import RunReport

REGISTRY_FILE = "registry.json"
BASE_COLUMNS = [
    "run_id", "kind", "n", "d", "seed", "event_count", "t0", "x_norm_at_t0", "S1", "S2",
    "depth", "node_count", "leaf_count", "passed", "failed_checks", "error",
]


def _finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return value


class TrackingService:
    def __init__(self, output_dir: str):
        """
        Initialize the run registry

        Args:
            output_dir: Directory holding registry.json
        """
        self.logger = logging.getLogger(__name__)
        self.tracking_file = os.path.join(output_dir, REGISTRY_FILE)
        self.logger.info(f"Tracking service initialized with file path: {self.tracking_file}")
        self.records = self._load_records()
        self.logger.info(f"Loaded {len(self.records)} existing run records")

    def _load_records(self) -> List[Dict[str, Any]]:
        """Load records from the registry or start empty if it doesn't exist"""
        try:
            if os.path.exists(self.tracking_file):
                with open(self.tracking_file, 'r') as f:
                    return json.load(f)
            os.makedirs(os.path.dirname(self.tracking_file) or ".", exist_ok=True)
            return []
        except Exception as e:
            self.logger.error(f"Error loading run records: {str(e)}")
            return []

    def _save_records(self) -> bool:
        try:
            self.records.sort(key=lambda record: record["run_id"])
            with open(self.tracking_file, 'w') as f:
                json.dump(self.records, f, indent=2, sort_keys=True)
            self.logger.debug(f"Saved {len(self.records)} run records")
            return True
        except Exception as e:
            self.logger.error(f"Error saving run records: {str(e)}")
            return False

    @staticmethod
    def record_from_report(report: RunReport) -> Dict[str, Any]:
        """Flatten a RunReport into one registry row; check margins become <name>_margin columns"""
        scenario = report.scenario or {}
        tree = report.tree
        record: Dict[str, Any] = {
            "run_id": report.run_id,
            "kind": scenario.get("kind", "log"),
            "n": scenario.get("n"),
            "d": scenario.get("d"),
            "seed": scenario.get("seed"),
            "event_count": report.event_count,
            "t0": report.t0,
            "x_norm_at_t0": report.x_norm_at_t0,
            "S1": _finite_or_none(report.root_split[0]) if report.root_split else None,
            "S2": _finite_or_none(report.root_split[1]) if report.root_split else None,
            "depth": tree.depth if tree else None,
            "node_count": tree.node_count if tree else None,
            "leaf_count": tree.leaf_count if tree else None,
            "passed": report.passed,
            "failed_checks": ";".join(c.name for c in report.checks if not c.passed),
            "error": report.error,
        }
        for check in report.checks:
            record[f"{check.name}_margin"] = _finite_or_none(check.margin)
        return record

    def add_run_record(self, report: RunReport) -> Dict[str, Any]:
        """
        Add or replace the record for a run

        Returns:
            The stored record
        """
        record = self.record_from_report(report)
        self.records = [r for r in self.records if r.get("run_id") != report.run_id]
        self.records.append(record)
        self._save_records()
        return record

    def reload_records(self) -> None:
        self.records = self._load_records()

    def get_all_records(self) -> pd.DataFrame:
        """
        Get all run records as a DataFrame, sorted by run id

        Returns:
            DataFrame with the base columns first and check margins after, alphabetically
        """
        self.reload_records()
        df = pd.DataFrame(self.records)
        if df.empty:
            return pd.DataFrame(columns=BASE_COLUMNS)
        margins = sorted(c for c in df.columns if c not in BASE_COLUMNS)
        for column in BASE_COLUMNS:
            if column not in df.columns:
                df[column] = None
        return df[BASE_COLUMNS + margins].sort_values("run_id").reset_index(drop=True)

    def write_aggregate_csv(self, path: str, run_ids: Optional[List[str]] = None) -> pd.DataFrame:
        """
        Write the aggregate CSV, optionally restricted to the given runs

        Returns:
            The written DataFrame
        """
        df = self.get_all_records()
        if run_ids is not None:
            df = df[df["run_id"].isin(run_ids)].reset_index(drop=True)
        df.to_csv(path, index=False, float_format="%.17g")
        self.logger.info(f"Wrote {len(df)} run rows to {path}")
        return df
