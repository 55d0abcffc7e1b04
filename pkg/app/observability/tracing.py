"""OpenTelemetry spans around training stages and benchmark runs."""
from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import Any, Iterator

from opentelemetry import trace
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter

logger = logging.getLogger(__name__)


def initialize_tracing(enabled: bool) -> None:
    """Configure a minimal OpenTelemetry tracer that exports to stdout.

    Without this call spans go to the no-op provider.
    """

    if not enabled:
        return
    provider = TracerProvider(resource=Resource.create({"service.name": "dynamic-planning-bench"}))
    provider.add_span_processor(BatchSpanProcessor(ConsoleSpanExporter()))
    trace.set_tracer_provider(provider)
    logger.info("OpenTelemetry tracing initialized with console exporter")


@contextmanager
def stage_span(name: str, **attributes: Any) -> Iterator[trace.Span]:
    """Open a span named ``name`` with scalar attributes rendered as strings when needed."""

    tracer = trace.get_tracer(__name__)
    with tracer.start_as_current_span(name) as span:
        for key, value in attributes.items():
            if not isinstance(value, (bool, int, float, str)):
                value = str(value)
            span.set_attribute(f"dplan.{key}", value)
        yield span


__all__ = ["initialize_tracing", "stage_span"]
