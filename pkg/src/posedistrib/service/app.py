"""FastAPI wiring for the estimation service."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from . import handlers, schemas

__all__ = ["create_app", "app"]


def create_app() -> FastAPI:
    app = FastAPI(
        title="posedistrib",
        version=__version__,
        description="6D pose distribution estimation on symmetry-aware object models",
    )

    def _call(fn, req):
        try:
            return fn(req)
        except handlers.ServiceError as e:
            raise HTTPException(status_code=422, detail=str(e)) from e

    @app.get("/api/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", name="posedistrib", version=__version__)

    @app.post("/api/models/build", response_model=schemas.BuildModelResponse)
    def build_model(req: schemas.BuildModelRequest) -> schemas.BuildModelResponse:
        return _call(handlers.build_model, req)

    @app.post("/api/run", response_model=schemas.RunResponse)
    def run(req: schemas.RunRequest) -> schemas.RunResponse:
        return _call(handlers.run, req)

    @app.post("/api/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
        return _call(handlers.sweep, req)

    @app.post("/api/losses", response_model=schemas.LossesResponse)
    def losses(req: schemas.LossesRequest) -> schemas.LossesResponse:
        return _call(handlers.losses, req)

    @app.post("/api/gt-set", response_model=schemas.GtSetResponse)
    def gt_set(req: schemas.GtSetRequest) -> schemas.GtSetResponse:
        return _call(handlers.gt_set, req)

    return app


app = create_app()
