"""Task metrics, engine evaluation and layer-usage statistics."""
from __future__ import annotations

import logging
from collections import defaultdict
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from sklearn.metrics import accuracy_score, f1_score, matthews_corrcoef

from app.engines.base import InferenceEngine, Prediction
from app.models.planning import PlanTrace
from app.schemas.models import MetricsRecord, TaskKind
from app.services.data import EncodedExample
from app.training.losses import predict

logger = logging.getLogger(__name__)


def _f1(predictions: Sequence, labels: Sequence) -> float:
    average = "binary" if len(set(labels) | set(predictions)) <= 2 else "macro"
    return float(f1_score(labels, predictions, average=average, zero_division=0))


def _pearson(predictions: Sequence, labels: Sequence) -> float:
    return float(stats.pearsonr(predictions, labels)[0])


def _spearman(predictions: Sequence, labels: Sequence) -> float:
    return float(stats.spearmanr(predictions, labels)[0])


METRICS: Dict[str, Callable[[Sequence, Sequence], float]] = {
    "accuracy": lambda predictions, labels: float(accuracy_score(labels, predictions)),
    "f1": _f1,
    "matthews": lambda predictions, labels: float(matthews_corrcoef(labels, predictions)),
    "pearson": _pearson,
    "spearman": _spearman,
    "pearson_spearman": lambda predictions, labels: (_pearson(predictions, labels) + _spearman(predictions, labels)) / 2,
}


def compute_metric(name: str, predictions: Sequence, labels: Sequence) -> float:
    if name not in METRICS:
        raise ValueError(f"unknown metric {name!r}; expected one of {sorted(METRICS)}")
    if len(predictions) != len(labels) or not labels:
        raise ValueError(f"metric needs equal, non-empty inputs ({len(predictions)} vs {len(labels)})")
    return METRICS[name](list(predictions), list(labels))


def evaluate(
    engine: InferenceEngine,
    examples: Sequence[EncodedExample],
    *,
    metric: str,
    task_kind: TaskKind,
    seed: Optional[int] = None,
) -> Tuple[MetricsRecord, List[Prediction]]:
    """Run ``engine`` on every example and score its predictions."""

    if not examples:
        raise ValueError("cannot evaluate on an empty dataset")
    predictions = [engine.run(example.seq) for example in examples]
    value = compute_metric(
        metric, [predict(p.logits, task_kind) for p in predictions], [example.label for example in examples]
    )
    record = MetricsRecord(
        engine=engine.name,
        metric_name=metric,
        metric=value,
        mean_executed_layers=float(np.mean([len(p.executed_layers) for p in predictions])),
        seed=seed,
    )
    logger.info("%s: %s=%.4f mean layers=%.2f", engine.name, metric, value, record.mean_executed_layers)
    return record, predictions


def layer_usage_histogram(traces: Sequence[PlanTrace]) -> np.ndarray:
    """freq[i] = fraction of traces whose action for layer i+1 is 1."""

    if not traces:
        raise ValueError("layer usage needs at least one trace")
    if any(trace.mode == "soft" for trace in traces):
        raise ValueError("soft traces have no discrete actions")
    return np.asarray([trace.actions for trace in traces], dtype=np.float64).mean(axis=0)


def stratified_layer_means(records: Iterable[Tuple[Optional[str], int]]) -> Dict[str, float]:
    """Mean executed-layer count per difficulty tag; untagged examples are skipped."""

    groups: Dict[str, List[int]] = defaultdict(list)
    for difficulty, layers in records:
        if difficulty is not None:
            groups[difficulty].append(layers)
    return {tag: float(np.mean(values)) for tag, values in sorted(groups.items())}


def median_over_seeds(values: Sequence[float]) -> float:
    if not values:
        raise ValueError("median over an empty set of runs")
    return float(np.median(values))


__all__ = [
    "METRICS",
    "compute_metric",
    "evaluate",
    "layer_usage_histogram",
    "median_over_seeds",
    "stratified_layer_means",
]
