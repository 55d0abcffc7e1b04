"""CSV training log shared by every stage."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Dict, List, Optional

LOG_COLUMNS = ("step", "stage", "task_loss", "mean_mu", "penalty", "mean_sum_R", "objective", "train_acc")


class TrainingLog:
    """Collects one row per optimizer step; optionally mirrors rows to a CSV file."""

    def __init__(self, path: Optional[Path] = None) -> None:
        self.rows: List[Dict[str, object]] = []
        self.path = Path(path) if path else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w", newline="", encoding="utf-8") as handle:
                csv.writer(handle).writerow(LOG_COLUMNS)

    def record(self, **values: object) -> Dict[str, object]:
        unknown = set(values) - set(LOG_COLUMNS)
        if unknown:
            raise ValueError(f"unknown log columns: {sorted(unknown)}")
        row = {column: values.get(column, "") for column in LOG_COLUMNS}
        self.rows.append(row)
        if self.path is not None:
            with self.path.open("a", newline="", encoding="utf-8") as handle:
                csv.writer(handle).writerow([_format(row[column]) for column in LOG_COLUMNS])
        return row

    def next_step(self) -> int:
        return len(self.rows) + 1


def _format(value: object) -> object:
    if isinstance(value, float):
        return repr(value)
    return value


__all__ = ["LOG_COLUMNS", "TrainingLog"]
