"""Prometheus metrics instrumentation."""
from __future__ import annotations

from prometheus_client import Counter, Histogram

REQUEST_COUNT = Counter(
    "dplan_inference_requests_total",
    "Total number of per-example inference requests",
    ["engine", "status"],
)

LATENCY = Histogram("dplan_inference_latency_seconds", "Latency of batch-size-1 inference", ["engine"])

EXECUTED_LAYERS = Histogram(
    "dplan_executed_layers",
    "Transformer layers evaluated per example",
    ["engine"],
    buckets=[0, 1, 2, 3, 4, 5, 6, 8, 10, 12, 16, 24],
)

TRAINING_STEPS = Counter("dplan_training_steps_total", "Optimizer steps taken", ["stage"])


def record(engine: str, status: str, duration: float) -> None:
    REQUEST_COUNT.labels(engine=engine, status=status).inc()
    LATENCY.labels(engine=engine).observe(duration)


def record_executed_layers(engine: str, layers: int) -> None:
    """Track the depth of each computational path."""

    EXECUTED_LAYERS.labels(engine=engine).observe(layers)


def record_training_step(stage: str) -> None:
    TRAINING_STEPS.labels(stage=stage).inc()
