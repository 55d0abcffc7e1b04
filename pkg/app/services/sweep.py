"""Performance-latency sweeps and curve comparisons."""
from __future__ import annotations

import logging
from typing import List, Optional, Sequence

import numpy as np

from app.engines.base import BaseEngine
from app.engines.implementations import BackboneEngine, EarlyExitEngine, PlanningEngine, TruncatedEngine
from app.models.checkpoint import ModelBundle
from app.schemas.models import CurvePoint, ExitConfig, OptimizerConfig, RLConfig
from app.services.bench import measure_latency
from app.services.data import EncodedExample
from app.training.pipeline import train_dpbert

logger = logging.getLogger(__name__)


def _point(
    variant: str,
    parameter: float,
    engine: BaseEngine,
    examples: Sequence[EncodedExample],
    *,
    base_mean_ns: float,
    warmup: int,
    repeats: int,
    metric: str,
    bundle: ModelBundle,
) -> CurvePoint:
    report = measure_latency(
        engine,
        examples,
        warmup=warmup,
        repeats=repeats,
        base_mean_ns=base_mean_ns,
        metric=metric,
        task_kind=bundle.task_kind,
    )
    return CurvePoint(
        variant=variant,
        parameter=float(parameter),
        latency_fraction=report.mean_ns / base_mean_ns,
        speedup=report.speedup,
        metric=report.metric,
        mean_executed_layers=report.mean_executed_layers,
    )


def base_latency(bundle: ModelBundle, examples: Sequence[EncodedExample], *, warmup: int, repeats: int) -> float:
    report = measure_latency(
        BackboneEngine(bundle), examples, warmup=warmup, repeats=repeats, metric=bundle.metric, task_kind=bundle.task_kind
    )
    return report.mean_ns


def sort_curve(points: Sequence[CurvePoint]) -> List[CurvePoint]:
    return sorted(points, key=lambda point: (point.latency_fraction, point.parameter))


def sweep_target_rate(
    bundle: ModelBundle,
    train_examples: Sequence[EncodedExample],
    eval_examples: Sequence[EncodedExample],
    target_rates: Sequence[float],
    *,
    gate_config: OptimizerConfig,
    rl: RLConfig,
    soft: bool = False,
    warmup: int = 5,
    repeats: int = 7,
    base_mean_ns: Optional[float] = None,
) -> List[CurvePoint]:
    """Train one gated model per target rate on the shared backbone and place each on the curve."""

    if len(target_rates) < 2:
        raise ValueError("a target-rate sweep needs at least two values")
    if len(set(target_rates)) != len(target_rates):
        raise ValueError(f"duplicate target rates in {list(target_rates)}")
    base = base_mean_ns or base_latency(bundle, eval_examples, warmup=warmup, repeats=repeats)
    variant = "dpbert-soft" if soft else "dpbert"
    points = []
    for target_rate in target_rates:
        model = train_dpbert(
            bundle, train_examples, gate_config=gate_config, rl=rl.copy(update={"target_rate": target_rate}), soft=soft
        )
        points.append(
            _point(
                variant,
                target_rate,
                PlanningEngine(model),
                eval_examples,
                base_mean_ns=base,
                warmup=warmup,
                repeats=repeats,
                metric=bundle.metric,
                bundle=bundle,
            )
        )
        logger.info("%s t=%.2f: fraction %.3f metric %.4f", variant, target_rate, points[-1].latency_fraction, points[-1].metric)
    return sort_curve(points)


def sweep_entropy_thresholds(
    bundle: ModelBundle,
    eval_examples: Sequence[EncodedExample],
    thresholds: Sequence[float],
    *,
    exit_on: str = "below",
    warmup: int = 5,
    repeats: int = 7,
    base_mean_ns: Optional[float] = None,
) -> List[CurvePoint]:
    if bundle.exits is None:
        raise ValueError("entropy sweeps need trained exit heads")
    base = base_mean_ns or base_latency(bundle, eval_examples, warmup=warmup, repeats=repeats)
    points = [
        _point(
            "early_exit",
            threshold,
            EarlyExitEngine(bundle, config=ExitConfig(entropy_threshold=threshold, exit_on=exit_on)),
            eval_examples,
            base_mean_ns=base,
            warmup=warmup,
            repeats=repeats,
            metric=bundle.metric,
            bundle=bundle,
        )
        for threshold in dict.fromkeys(thresholds)
    ]
    return sort_curve(points)


def sweep_truncation(
    bundle: ModelBundle,
    eval_examples: Sequence[EncodedExample],
    depths: Sequence[int],
    *,
    warmup: int = 5,
    repeats: int = 7,
    base_mean_ns: Optional[float] = None,
) -> List[CurvePoint]:
    """Static first-k-layer models; they define the comparison speed-up band."""

    base = base_mean_ns or base_latency(bundle, eval_examples, warmup=warmup, repeats=repeats)
    points = [
        _point(
            "truncated",
            depth,
            TruncatedEngine(bundle, depth=depth),
            eval_examples,
            base_mean_ns=base,
            warmup=warmup,
            repeats=repeats,
            metric=bundle.metric,
            bundle=bundle,
        )
        for depth in dict.fromkeys(depths)
    ]
    return sort_curve(points)


def dominated_points(curve_a: Sequence[CurvePoint], curve_b: Sequence[CurvePoint]) -> int:
    """Points of ``curve_a`` inside ``curve_b``'s latency range whose metric is at least b's interpolated metric."""

    if len(curve_b) < 2:
        return 0
    ordered = sort_curve(curve_b)
    fractions = np.asarray([point.latency_fraction for point in ordered])
    values = np.asarray([point.metric for point in ordered])
    count = 0
    for point in curve_a:
        if fractions[0] < point.latency_fraction < fractions[-1]:
            if point.metric >= float(np.interp(point.latency_fraction, fractions, values)):
                count += 1
    return count


def weakly_dominates(curve_a: Sequence[CurvePoint], curve_b: Sequence[CurvePoint], min_points: int = 2) -> bool:
    return dominated_points(curve_a, curve_b) >= min_points


def band_filter(points: Sequence[CurvePoint], low: float = 1.30, high: float = 1.96) -> List[CurvePoint]:
    """Keep points whose speed-up lies in [low, high]."""

    if low > high:
        raise ValueError(f"empty band [{low}, {high}]")
    return [point for point in points if low <= point.speedup <= high]


__all__ = [
    "band_filter",
    "base_latency",
    "dominated_points",
    "sort_curve",
    "sweep_entropy_thresholds",
    "sweep_target_rate",
    "sweep_truncation",
    "weakly_dominates",
]
