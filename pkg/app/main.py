"""FastAPI application entrypoint for per-example inference."""
from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from app.api.routes import build_admin_router, build_public_router
from app.config.settings import Settings, get_settings
from app.models.checkpoint import ModelBundle, load_checkpoint
from app.observability.tracing import initialize_tracing
from app.services.inference import ClassificationService

logger = logging.getLogger(__name__)


def create_app(settings: Settings | None = None, bundle: ModelBundle | None = None) -> FastAPI:
    """Create and configure a FastAPI application instance.

    ``bundle`` wins over ``settings.checkpoint_path``; without either the
    classification route answers 503.
    """

    settings = settings or get_settings()
    logging.basicConfig(level=settings.log_level)
    initialize_tracing(settings.telemetry_enabled)

    if bundle is None and settings.checkpoint_path is not None:
        bundle = load_checkpoint(settings.checkpoint_path)
    service = ClassificationService(bundle, settings) if bundle is not None else None
    if service is None:
        logger.warning("No checkpoint configured; classification endpoint disabled")

    app = FastAPI(title=settings.app_name)

    @app.exception_handler(ValueError)
    async def value_error_handler(request: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(status_code=422, content={"error": type(exc).__name__, "message": str(exc)})

    app.include_router(build_public_router(service, settings), prefix=settings.api_v1_prefix)
    app.include_router(build_admin_router(settings, service), prefix=settings.admin_prefix)
    return app
