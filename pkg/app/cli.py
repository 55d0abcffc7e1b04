"""Command-line surface: data generation, the training stages, evaluation, benchmarks and serving.

Every command reads a key=value config file (``--config``) plus ``--set key=value``
overrides. Failures exit with status 1 and print one JSON line on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, NoReturn, Optional, Sequence

import numpy as np

from app.config.settings import Settings, load_settings, parse_value
from app.engines.implementations import ENGINE_REGISTRY, create_engine
from app.errors import UsageError
from app.models.backbone import Backbone
from app.models.checkpoint import ModelBundle, load_checkpoint, save_checkpoint
from app.models.early_exit import ExitHeads
from app.models.planning import PlanningModule
from app.observability.tracing import initialize_tracing
from app.schemas.models import CurvePoint, MetricsRecord
from app.services.bench import calibrate_cost_model, forced_layer_sweep, measure_latency
from app.services.data import EncodedExample, Vocabulary, encode_dataset, load_dataset, load_splits, write_jsonl
from app.services.evaluation import evaluate, stratified_layer_means
from app.services.reports import write_records_csv
from app.services.sweep import (
    band_filter,
    base_latency,
    dominated_points,
    sweep_entropy_thresholds,
    sweep_target_rate,
    sweep_truncation,
)
from app.services.synthetic import gen_synthetic
from app.services.traces import dump_traces
from app.training.log import TrainingLog
from app.training.reinforce import train_rl
from app.training.stages import stage1_finetune_backbone, stage2_init_gates, train_exit_heads, train_soft_ablation

logger = logging.getLogger(__name__)

Command = Callable[[Settings, argparse.Namespace], dict]


def _parse_overrides(pairs: Sequence[str]) -> Dict[str, object]:
    overrides: Dict[str, object] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"--set expects key=value, got {pair!r}")
        overrides[key.strip().lower()] = parse_value(value)
    return overrides


def _checkpoint(settings: Settings, args: argparse.Namespace, default: str) -> Path:
    return Path(args.checkpoint) if args.checkpoint else settings.run_dir / default


def _training_examples(settings: Settings, bundle: ModelBundle) -> List[EncodedExample]:
    return _split_examples(settings, bundle, "train")


def _split_examples(settings: Settings, bundle: ModelBundle, split: str) -> List[EncodedExample]:
    spec = load_dataset(
        settings.data_dir / f"{split}.jsonl",
        vocab=Vocabulary(bundle.vocab),
        labels=bundle.labels or None,
        task_kind=bundle.task_kind,
        metric=bundle.metric,
    )
    return encode_dataset(spec, bundle.config.max_seq_len)


def _log(settings: Settings, name: str) -> TrainingLog:
    return TrainingLog(settings.run_dir / f"{name}.csv")


def cmd_gen_data(settings: Settings, args: argparse.Namespace) -> dict:
    kind = args.kind or settings.synthetic_kind
    sizes = {"train": settings.synthetic_size, "dev": settings.eval_size, "test": settings.eval_size}
    written = {}
    for offset, (split, size) in enumerate(sizes.items()):
        spec = gen_synthetic(kind, size, settings.seed + offset)
        written[split] = str(write_jsonl(spec, settings.data_dir / f"{split}.jsonl"))
    return {"kind": kind, "splits": written}


def cmd_train_backbone(settings: Settings, args: argparse.Namespace) -> dict:
    train = load_splits(settings.data_dir)["train"]
    examples = encode_dataset(train, settings.max_seq_len)
    num_classes = 1 if train.task_kind == "regression" else len(train.labels)
    config = settings.backbone_config(vocab_size=len(train.vocab), num_classes=num_classes)
    backbone = Backbone.initialize(config, np.random.default_rng(settings.seed))
    stage1_finetune_backbone(
        backbone, examples, settings.optimizer_config(), train.task_kind, log=_log(settings, "train_backbone")
    )
    bundle = ModelBundle(
        config=config,
        backbone=backbone,
        task_kind=train.task_kind,
        vocab=train.vocab,
        labels=train.labels,
        metric=train.metric,
        stage="backbone-finetune",
    )
    return {"checkpoint": str(save_checkpoint(bundle, Path(args.out or settings.run_dir / "backbone.json")))}


def cmd_init_gates(settings: Settings, args: argparse.Namespace) -> dict:
    bundle = load_checkpoint(_checkpoint(settings, args, "backbone.json"))
    examples = _training_examples(settings, bundle)
    bundle.gates = PlanningModule.for_backbone(bundle.backbone, np.random.default_rng(settings.seed))
    stage2_init_gates(
        bundle.backbone, bundle.gates, examples, settings.optimizer_config(), bundle.task_kind, log=_log(settings, "init_gates")
    )
    bundle.stage = "gate-init"
    return {"checkpoint": str(save_checkpoint(bundle, Path(args.out or settings.run_dir / "gates.json")))}


def _joint(settings: Settings, args: argparse.Namespace, *, soft: bool) -> dict:
    bundle = load_checkpoint(_checkpoint(settings, args, "gates.json"))
    if bundle.gates is None:
        raise ValueError("joint training needs a checkpoint with initialized gates (run init-gates)")
    examples = _training_examples(settings, bundle)
    rl = settings.rl_config()
    if soft:
        train_soft_ablation(bundle.backbone, bundle.gates, examples, rl, bundle.task_kind, log=_log(settings, "train_soft"))
        bundle.stage, default = "soft-ablation", "dpbert_soft.json"
    else:
        train_rl(bundle.backbone, bundle.gates, examples, rl, bundle.task_kind, log=_log(settings, "train_rl"))
        bundle.stage, default = "rl-joint", "dpbert.json"
    bundle.rl_config = rl
    return {"checkpoint": str(save_checkpoint(bundle, Path(args.out or settings.run_dir / default)))}


def cmd_train_rl(settings: Settings, args: argparse.Namespace) -> dict:
    return _joint(settings, args, soft=False)


def cmd_train_soft(settings: Settings, args: argparse.Namespace) -> dict:
    return _joint(settings, args, soft=True)


def cmd_train_exit(settings: Settings, args: argparse.Namespace) -> dict:
    bundle = load_checkpoint(_checkpoint(settings, args, "backbone.json"))
    examples = _training_examples(settings, bundle)
    bundle.exits = ExitHeads.initialize(bundle.config, np.random.default_rng(settings.seed))
    train_exit_heads(
        bundle.backbone, bundle.exits, examples, settings.optimizer_config(), bundle.task_kind, log=_log(settings, "train_exit")
    )
    return {"checkpoint": str(save_checkpoint(bundle, Path(args.out or settings.run_dir / "early_exit.json")))}


def _engines(args: argparse.Namespace, settings: Settings) -> List[str]:
    return args.engine or [settings.default_engine]


def cmd_eval(settings: Settings, args: argparse.Namespace) -> dict:
    bundle = load_checkpoint(_checkpoint(settings, args, "dpbert.json"))
    examples = _split_examples(settings, bundle, args.split)
    records: List[MetricsRecord] = []
    for name in _engines(args, settings):
        record, _ = evaluate(
            create_engine(name, bundle, settings), examples, metric=bundle.metric, task_kind=bundle.task_kind, seed=settings.seed
        )
        records.append(record)
    path = write_records_csv(records, Path(args.out or settings.run_dir / "metrics.csv"))
    return {"metrics": str(path), "records": [record.dict() for record in records]}


def cmd_bench(settings: Settings, args: argparse.Namespace) -> dict:
    bundle = load_checkpoint(_checkpoint(settings, args, "dpbert.json"))
    examples = _split_examples(settings, bundle, args.split)
    warmup, repeats = settings.warmup, settings.repeats
    base = base_latency(bundle, examples, warmup=warmup, repeats=repeats)
    reports = [
        measure_latency(
            create_engine(name, bundle, settings),
            examples,
            warmup=warmup,
            repeats=repeats,
            base_mean_ns=base,
            metric=bundle.metric,
            task_kind=bundle.task_kind,
        )
        for name in _engines(args, settings)
    ]
    result = {"latency": str(write_records_csv(reports, Path(args.out or settings.run_dir / "latency.csv"), exclude={"per_example_ns"}))}
    if args.forced and bundle.gates is not None:
        model = calibrate_cost_model(bundle, examples, warmup=warmup, repeats=repeats)
        result["forced"] = [
            {
                "executed": executed,
                "speedup": report.speedup,
                "predicted": model.predicted_speedup(bundle.config.num_layers, executed),
            }
            for executed, report in forced_layer_sweep(bundle, examples, args.forced, warmup=warmup, repeats=repeats, metric=bundle.metric)
        ]
    return result


def cmd_sweep(settings: Settings, args: argparse.Namespace) -> dict:
    bundle = load_checkpoint(_checkpoint(settings, args, "early_exit.json"))
    train = _training_examples(settings, bundle)
    examples = _split_examples(settings, bundle, args.split)
    warmup, repeats = settings.warmup, settings.repeats
    base = base_latency(bundle, examples, warmup=warmup, repeats=repeats)
    curves: Dict[str, List[CurvePoint]] = {
        "dpbert": sweep_target_rate(
            bundle,
            train,
            examples,
            settings.target_rates,
            gate_config=settings.optimizer_config(),
            rl=settings.rl_config(),
            warmup=warmup,
            repeats=repeats,
            base_mean_ns=base,
        ),
        "truncated": sweep_truncation(
            bundle,
            examples,
            [depth for depth in settings.truncation_depths if depth <= bundle.config.num_layers],
            warmup=warmup,
            repeats=repeats,
            base_mean_ns=base,
        ),
    }
    if bundle.exits is not None:
        curves["early_exit"] = sweep_entropy_thresholds(
            bundle, examples, settings.entropy_thresholds, exit_on=settings.exit_on, warmup=warmup, repeats=repeats, base_mean_ns=base
        )
    points = [point for curve in curves.values() for point in curve]
    if settings.band_filter:
        points = band_filter(points, settings.band_low, settings.band_high)
    points.sort(key=lambda point: (point.variant, point.latency_fraction, point.parameter))
    path = write_records_csv(points, Path(args.out or settings.run_dir / "curve.csv"))
    dominance = {
        f"dpbert>{name}": dominated_points(curves["dpbert"], curve) for name, curve in curves.items() if name != "dpbert"
    }
    return {"curve": str(path), "dominated_points": dominance}


def cmd_dump_traces(settings: Settings, args: argparse.Namespace) -> dict:
    bundle = load_checkpoint(_checkpoint(settings, args, "dpbert.json"))
    examples = _split_examples(settings, bundle, args.split)
    engine = create_engine((args.engine or ["dpbert"])[0], bundle, settings)
    records = dump_traces(engine, examples, Path(args.out or settings.run_dir / f"traces_{engine.name}.jsonl"))
    return {
        "traces": len(records),
        "stratified_layer_means": stratified_layer_means((r.difficulty, len(r.executed_layers)) for r in records),
    }


def cmd_serve(settings: Settings, args: argparse.Namespace) -> dict:
    import uvicorn

    from app.main import create_app

    if args.checkpoint:
        settings = settings.copy(update={"checkpoint_path": Path(args.checkpoint)})
    uvicorn.run(create_app(settings), host=settings.host, port=settings.port, log_level=settings.log_level.lower())
    return {"served": True}


COMMANDS: Dict[str, Command] = {
    "gen-data": cmd_gen_data,
    "train-backbone": cmd_train_backbone,
    "init-gates": cmd_init_gates,
    "train-rl": cmd_train_rl,
    "train-soft": cmd_train_soft,
    "train-exit": cmd_train_exit,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
    "dump-traces": cmd_dump_traces,
    "serve": cmd_serve,
}


class CommandParser(argparse.ArgumentParser):
    """Argument parser that raises :class:`UsageError` instead of exiting with status 2."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = CommandParser(prog="dplan", description="Dynamic layer planning for encoder inference")
    parser.add_argument("--config", type=Path, help="key=value configuration file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--checkpoint", help="input checkpoint (defaults under run_dir)")
        sub.add_argument("--out", help="output path (defaults under run_dir)")
        sub.add_argument("--split", default="test", choices=["train", "dev", "test"])
        sub.add_argument(
            "--engine", action="append", choices=sorted(ENGINE_REGISTRY), help="engine to evaluate; repeatable"
        )
        if name == "gen-data":
            sub.add_argument("--kind", help="synthetic task kind")
        if name == "bench":
            sub.add_argument("--forced", type=int, nargs="*", default=[], help="forced executed-layer counts")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        settings = load_settings(args.config, **_parse_overrides(args.overrides))
        logging.basicConfig(level=settings.log_level)
        initialize_tracing(settings.telemetry_enabled)
        result = COMMANDS[args.command](settings, args)
    except Exception as exc:
        logger.debug("command %s failed", command, exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
