"""Request-level classification service used by the HTTP surface."""
from __future__ import annotations

import time
from typing import Dict

from app.config.settings import Settings
from app.engines.base import BaseEngine
from app.engines.implementations import create_engine
from app.models.checkpoint import ModelBundle
from app.models.planning import render_path
from app.schemas.models import ClassificationRequest, ClassificationResponse
from app.services.data import Vocabulary
from app.training.losses import predict


class ClassificationService:
    """Encode text with the bundle vocabulary and route it through the requested engine."""

    def __init__(self, bundle: ModelBundle, settings: Settings) -> None:
        self.bundle = bundle
        self.settings = settings
        self.vocab = Vocabulary(bundle.vocab)
        self._engines: Dict[str, BaseEngine] = {}

    def engine(self, name: str) -> BaseEngine:
        if name not in self._engines:
            self._engines[name] = create_engine(name, self.bundle, self.settings)
        return self._engines[name]

    def classify(self, request: ClassificationRequest) -> ClassificationResponse:
        engine = self.engine(request.engine or self.settings.default_engine)
        seq = self.vocab.encode(request.text, request.text_b, max_seq_len=self.bundle.config.max_seq_len)
        start = time.perf_counter()
        prediction = engine.run(seq)
        latency_ms = (time.perf_counter() - start) * 1000.0
        label = predict(prediction.logits, self.bundle.task_kind)
        if self.bundle.task_kind != "regression" and self.bundle.labels:
            label = self.bundle.labels[label]
        return ClassificationResponse(
            engine=engine.name,
            label=label,
            logits=[float(value) for value in prediction.logits.reshape(-1)],
            executed_layers=prediction.executed_layers,
            path=render_path(prediction.executed_layers),
            exit_layer=prediction.exit_layer,
            latency_ms=latency_ms,
        )


__all__ = ["ClassificationService"]
