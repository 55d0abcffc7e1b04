"""API router definitions."""
from __future__ import annotations

from fastapi import APIRouter, HTTPException, Response
from fastapi.responses import PlainTextResponse
from prometheus_client import generate_latest

from app.config.settings import Settings
from app.observability import metrics
from app.schemas.models import ClassificationRequest, ClassificationResponse
from app.services.inference import ClassificationService


def build_public_router(service: ClassificationService | None, settings: Settings) -> APIRouter:
    api_router = APIRouter()

    @api_router.post("/classifications", response_model=ClassificationResponse)
    def classify(request: ClassificationRequest) -> ClassificationResponse:
        if service is None:
            metrics.record(request.engine or settings.default_engine, "no_model", 0.0)
            raise HTTPException(status_code=503, detail="no checkpoint loaded")
        return service.classify(request)

    return api_router


def build_admin_router(settings: Settings, service: ClassificationService | None = None) -> APIRouter:
    admin_router = APIRouter()

    @admin_router.get("/health", response_class=PlainTextResponse)
    async def health() -> str:
        return "ok"

    @admin_router.get("/model")
    async def model() -> dict:
        if service is None:
            return {"loaded": False}
        bundle = service.bundle
        return {
            "loaded": True,
            "stage": bundle.stage,
            "task_kind": bundle.task_kind,
            "num_layers": bundle.config.num_layers,
            "engines": sorted(
                name
                for name, available in {
                    "backbone": True,
                    "truncated": True,
                    "dpbert": bundle.gates is not None,
                    "early_exit": bundle.exits is not None,
                }.items()
                if available
            ),
            "default_engine": settings.default_engine,
        }

    if settings.prometheus_enabled:

        @admin_router.get("/metrics")
        async def metrics_endpoint() -> Response:
            return Response(generate_latest(), media_type="text/plain")

    return admin_router


__all__ = ["build_public_router", "build_admin_router"]
