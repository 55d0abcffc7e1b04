"""JSON checkpoints: a header with configs and vocabulary plus a flat parameter map."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from app.models.backbone import Backbone
from app.models.early_exit import ExitHeads
from app.models.planning import PlanningModule
from app.schemas.models import ModelConfig, RLConfig, TaskKind

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dplan-checkpoint/1"


@dataclass
class ModelBundle:
    """Everything needed to encode inputs and run any engine variant."""

    config: ModelConfig
    backbone: Backbone
    task_kind: TaskKind
    vocab: Dict[str, int]
    labels: List[str] = field(default_factory=list)
    metric: str = "accuracy"
    gates: Optional[PlanningModule] = None
    exits: Optional[ExitHeads] = None
    rl_config: Optional[RLConfig] = None
    stage: Optional[str] = None

    def parameter_sets(self) -> Dict[str, Dict[str, np.ndarray]]:
        sets = {"backbone": self.backbone.params}
        if self.gates is not None:
            sets["gates"] = self.gates.params
        if self.exits is not None:
            sets["exits"] = self.exits.params
        return sets


def _encode(params: Dict[str, np.ndarray]) -> Dict[str, dict]:
    return {name: {"shape": list(value.shape), "data": value.reshape(-1).tolist()} for name, value in params.items()}


def _decode(raw: Dict[str, dict]) -> Dict[str, np.ndarray]:
    return {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(tuple(entry["shape"]))
        for name, entry in raw.items()
    }


def save_checkpoint(bundle: ModelBundle, path: Path) -> Path:
    """Write ``bundle`` as JSON; float64 values round-trip bit-exactly."""

    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "header": {
            "model_config": bundle.config.dict(),
            "task_kind": bundle.task_kind,
            "vocab": bundle.vocab,
            "labels": bundle.labels,
            "metric": bundle.metric,
            "rl_config": bundle.rl_config.dict() if bundle.rl_config else None,
            "stage": bundle.stage,
        },
        "params": {group: _encode(params) for group, params in bundle.parameter_sets().items()},
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.info("Saved checkpoint %s (stage=%s)", path, bundle.stage)
    return path


def load_checkpoint(path: Path) -> ModelBundle:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    header = payload["header"]
    config = ModelConfig(**header["model_config"])
    params = payload["params"]
    gates = (
        PlanningModule(config.num_layers, config.d_model, _decode(params["gates"])) if "gates" in params else None
    )
    exits = ExitHeads(config.num_layers, _decode(params["exits"])) if "exits" in params else None
    return ModelBundle(
        config=config,
        backbone=Backbone(config, _decode(params["backbone"])),
        task_kind=header["task_kind"],
        vocab=header["vocab"],
        labels=header.get("labels", []),
        metric=header.get("metric", "accuracy"),
        gates=gates,
        exits=exits,
        rl_config=RLConfig(**header["rl_config"]) if header.get("rl_config") else None,
        stage=header.get("stage"),
    )


__all__ = ["CHECKPOINT_FORMAT", "ModelBundle", "load_checkpoint", "save_checkpoint"]
