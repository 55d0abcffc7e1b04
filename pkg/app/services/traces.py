"""Per-example routing traces for case studies."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Sequence

from app.engines.base import BaseEngine
from app.models.planning import render_path
from app.schemas.models import TraceRecord
from app.services.data import EncodedExample

logger = logging.getLogger(__name__)


def collect_traces(engine: BaseEngine, examples: Sequence[EncodedExample]) -> List[TraceRecord]:
    records = []
    for example in examples:
        prediction = engine.analyze(example.seq)
        records.append(
            TraceRecord(
                example_id=example.id,
                scores=prediction.scores,
                actions=prediction.actions,
                executed_layers=prediction.executed_layers,
                path=render_path(prediction.executed_layers),
                logits=[float(value) for value in prediction.logits.reshape(-1)],
                label=example.label,
                difficulty=example.difficulty,
                exit_layer=prediction.exit_layer,
            )
        )
    return records


def dump_traces(engine: BaseEngine, examples: Sequence[EncodedExample], path: Path) -> List[TraceRecord]:
    """Write one JSON object per example; rows are ordered as ``examples``."""

    path = Path(path)
    records = collect_traces(engine, examples)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            for record in records:
                handle.write(record.json() + "\n")
    except OSError as exc:
        raise OSError(f"cannot write traces to {path}: {exc}") from exc
    logger.info("Wrote %d %s traces to %s", len(records), engine.name, path)
    return records


__all__ = ["collect_traces", "dump_traces"]
