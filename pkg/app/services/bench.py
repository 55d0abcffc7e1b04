"""Per-instance latency measurement at batch size 1 and speed-up accounting."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from app.engines.base import BaseEngine
from app.engines.implementations import BackboneEngine, PlanningEngine, TruncatedEngine
from app.models.checkpoint import ModelBundle
from app.observability.tracing import stage_span
from app.schemas.models import LatencyReport, TaskKind
from app.services.data import EncodedExample
from app.services.evaluation import compute_metric
from app.training.losses import predict

logger = logging.getLogger(__name__)

TIMING_THREADS = 1


def speedup_ratio(base_mean_ns: float, variant_mean_ns: float) -> float:
    """base / variant."""

    if variant_mean_ns <= 0 or base_mean_ns <= 0:
        raise ValueError(f"latencies must be positive (base={base_mean_ns}, variant={variant_mean_ns})")
    return base_mean_ns / variant_mean_ns


def time_example(engine: BaseEngine, example: EncodedExample, warmup: int, repeats: int) -> int:
    """Median of ``repeats`` timed forward passes after ``warmup`` discarded ones."""

    for _ in range(warmup):
        engine.analyze(example.seq)
    samples = []
    for _ in range(repeats):
        start = time.perf_counter_ns()
        engine.analyze(example.seq)
        samples.append(time.perf_counter_ns() - start)
    return int(np.median(samples))


def measure_latency(
    engine: BaseEngine,
    examples: Sequence[EncodedExample],
    *,
    warmup: int = 5,
    repeats: int = 7,
    base_mean_ns: Optional[float] = None,
    metric: str = "accuracy",
    task_kind: TaskKind = "classification",
) -> LatencyReport:
    """Time ``engine`` one example at a time with BLAS pinned to one thread.

    Without ``base_mean_ns`` the engine is its own base and the speed-up is 1.
    """

    if not examples:
        raise ValueError("cannot measure latency on an empty dataset")
    if repeats < 3:
        raise ValueError("repeats must be at least 3")
    if warmup < 0:
        raise ValueError("warmup must be non-negative")
    with stage_span("bench", engine=engine.name, examples=len(examples), warmup=warmup, repeats=repeats):
        with threadpool_limits(limits=TIMING_THREADS):
            per_example = [time_example(engine, example, warmup, repeats) for example in examples]
            predictions = [engine.analyze(example.seq) for example in examples]
    mean_ns = float(np.mean(per_example))
    base = mean_ns if base_mean_ns is None else float(base_mean_ns)
    layers = float(np.mean([len(p.executed_layers) for p in predictions]))
    gates = float(np.mean([p.gate_evaluations for p in predictions]))
    metric_value = compute_metric(
        metric, [predict(p.logits, task_kind) for p in predictions], [example.label for example in examples]
    )
    report = LatencyReport(
        engine=engine.name,
        per_example_ns=per_example,
        mean_ns=mean_ns,
        median_ns=float(np.median(per_example)),
        base_mean_ns=base,
        speedup=speedup_ratio(base, mean_ns),
        mean_executed_layers=layers,
        mean_gate_evaluations=gates,
        flop_proxy=layers + gates,
        metric_name=metric,
        metric=metric_value,
        warmup=warmup,
        repeats=repeats,
        threads=TIMING_THREADS,
    )
    logger.info("%s: mean %.0f ns, speed-up %.3f, %.2f layers", engine.name, mean_ns, report.speedup, layers)
    return report


@dataclass(frozen=True)
class CostModel:
    """Per-layer cost plus fixed overhead, both in nanoseconds.

    ``gated_overhead_ns`` is the overhead with gates evaluated; it defaults to ``overhead_ns``.
    """

    layer_ns: float
    overhead_ns: float
    gated_overhead_ns: Optional[float] = None

    def predicted_speedup(self, num_layers: int, executed: int) -> float:
        """(L*c + o) / (k*c + o_gated)."""

        if not 0 <= executed <= num_layers:
            raise ValueError(f"executed layers {executed} outside [0, {num_layers}]")
        gated = self.overhead_ns if self.gated_overhead_ns is None else self.gated_overhead_ns
        return speedup_ratio(num_layers * self.layer_ns + self.overhead_ns, executed * self.layer_ns + gated)


def _mean_latency(engine: BaseEngine, examples: Sequence[EncodedExample], warmup: int, repeats: int) -> float:
    with threadpool_limits(limits=TIMING_THREADS):
        return float(np.mean([time_example(engine, example, warmup, repeats) for example in examples]))


def calibrate_cost_model(
    bundle: ModelBundle, examples: Sequence[EncodedExample], *, warmup: int = 5, repeats: int = 7
) -> CostModel:
    """Measure overhead (no layers) and per-layer cost in isolation on ``examples``."""

    if not examples:
        raise ValueError("cannot calibrate on an empty dataset")
    num_layers = bundle.config.num_layers
    if num_layers == 0:
        raise ValueError("cost model needs at least one layer")
    overhead = _mean_latency(TruncatedEngine(bundle, depth=0), examples, warmup, repeats)
    full = _mean_latency(BackboneEngine(bundle), examples, warmup, repeats)
    gated_overhead = None
    if bundle.gates is not None:
        bypass = PlanningEngine(bundle, forced_actions=[0] * num_layers)
        gated_overhead = _mean_latency(bypass, examples, warmup, repeats)
    model = CostModel(layer_ns=max(full - overhead, 0.0) / num_layers, overhead_ns=overhead, gated_overhead_ns=gated_overhead)
    logger.info("cost model: layer %.0f ns, overhead %.0f ns, gated overhead %s", model.layer_ns, overhead, gated_overhead)
    return model


def prefix_actions(num_layers: int, executed: int) -> List[int]:
    return [1] * executed + [0] * (num_layers - executed)


def forced_layer_sweep(
    bundle: ModelBundle,
    examples: Sequence[EncodedExample],
    executed_counts: Sequence[int],
    *,
    warmup: int = 5,
    repeats: int = 7,
    metric: str = "accuracy",
) -> List[Tuple[int, LatencyReport]]:
    """Latency of gated inference forced to execute the first ``k`` layers, against the full backbone."""

    if bundle.gates is None:
        raise ValueError("forced sweeps need planning gates")
    num_layers = bundle.config.num_layers
    base = measure_latency(
        BackboneEngine(bundle), examples, warmup=warmup, repeats=repeats, metric=metric, task_kind=bundle.task_kind
    )
    results = []
    for executed in executed_counts:
        engine = PlanningEngine(bundle, forced_actions=prefix_actions(num_layers, executed))
        report = measure_latency(
            engine,
            examples,
            warmup=warmup,
            repeats=repeats,
            base_mean_ns=base.mean_ns,
            metric=metric,
            task_kind=bundle.task_kind,
        )
        results.append((executed, report))
    return results


__all__ = [
    "CostModel",
    "calibrate_cost_model",
    "forced_layer_sweep",
    "measure_latency",
    "prefix_actions",
    "speedup_ratio",
    "time_example",
]
