"""HTTP surface: POST /v1/inpaint and GET /v1/health.

Responses are serialized canonically (sorted keys, compact separators) so
conformance suites can compare bytes.  Concurrency is bounded by a semaphore
sized to max_jobs; a full queue answers 503 and clients retry with backoff.
"""

from __future__ import annotations

import logging
import threading

from fastapi import FastAPI, Request, Response
from starlette.concurrency import run_in_threadpool

from .config import ServerConfig
from .engines import make_engine
from .protocol import BadRequest, canonical_json, parse_job

logger = logging.getLogger(__name__)


def _reply(payload: dict, status: int = 200) -> Response:
    return Response(canonical_json(payload), status_code=status, media_type="application/json")


def create_app(config: ServerConfig | None = None) -> FastAPI:
    cfg = config or ServerConfig()
    engine = make_engine(cfg)
    app = FastAPI(title="inpainting reference service", openapi_url=None, docs_url=None, redoc_url=None)
    app.state.config = cfg
    app.state.engine = engine
    app.state.jobs = threading.BoundedSemaphore(cfg.max_jobs)

    @app.get("/v1/health")
    def health() -> Response:
        return _reply(
            {
                "latent_factor": cfg.latent_factor,
                "max_steps": cfg.max_steps,
                "model": cfg.model_name,
            }
        )

    @app.post("/v1/inpaint")
    async def inpaint(request: Request) -> Response:
        body = await request.body()
        try:
            job = parse_job(body, cfg.max_steps)
        except BadRequest as exc:
            return _reply({"error": str(exc)}, status=400)

        if not app.state.jobs.acquire(blocking=False):
            return _reply({"error": f"job queue full ({cfg.max_jobs} in flight); retry later"}, status=503)
        try:
            result = await run_in_threadpool(engine.run, job)
        except Exception:
            logger.exception("inpaint job failed")
            return _reply({"error": "internal failure while processing the job"}, status=500)
        finally:
            app.state.jobs.release()
        return _reply(result)

    return app


def serve(config: ServerConfig, host: str = "127.0.0.1", port: int = 8000, log_level: str = "info"):
    """Run the service until interrupted."""
    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port, log_level=log_level)
