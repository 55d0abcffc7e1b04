"""CSV writers for metric records, latency reports and curves."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

from pydantic import BaseModel


def write_records_csv(records: Sequence[BaseModel], path: Path, *, exclude: Iterable[str] = ()) -> Path:
    """One row per record, columns in field order; list-valued fields should be excluded."""

    path = Path(path)
    if not records:
        raise ValueError(f"no records to write to {path}")
    excluded = set(exclude)
    columns = [name for name in type(records[0]).__fields__ if name not in excluded]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns)
            writer.writeheader()
            for record in records:
                writer.writerow(record.dict(include=set(columns)))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


__all__ = ["write_records_csv"]
