"""FastAPI application exposing the four-endpoint model wire protocol."""

from __future__ import annotations

import threading

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import ShimConfig
from .fixtures import FixtureBackend


class CompleteRequest(BaseModel):
    model: str
    prompt: str
    max_tokens: int = 16
    temperature: float = 0.0
    stop: list[str] = []


class VqaRequest(BaseModel):
    model: str
    image_b64: str
    question: str


class CaptionRequest(BaseModel):
    model: str
    image_b64: str
    question: str | None = None


class EmbedRequest(BaseModel):
    model: str
    kind: str
    text: str | None = None
    image_b64: str | None = None


def create_app(config: ShimConfig) -> FastAPI:
    app = FastAPI(title="ira model shim", version="0.1.0")

    if config.fixture_path is not None:
        backend = FixtureBackend(config.fixture_path, embed_dim=config.embed_dim)
        fixture_mode = True
    else:
        from .live import LiveBackend

        backend = LiveBackend(config)
        fixture_mode = False

    # model inference serialized per role, with a bounded waiting queue
    locks = {role: threading.Lock() for role in config.enabled_roles}
    queue_slots = {role: threading.Semaphore(config.queue_size) for role in config.enabled_roles}

    @app.exception_handler(RequestValidationError)
    async def malformed_payload(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    def run(role: str, fn):
        if role not in locks:
            return JSONResponse(status_code=400, content={"error": f"role {role!r} not enabled"})
        if not queue_slots[role].acquire(blocking=False):
            return JSONResponse(status_code=503, content={"error": "queue full"})
        try:
            with locks[role]:
                return fn()
        finally:
            queue_slots[role].release()

    @app.get("/healthz")
    def healthz():
        if fixture_mode:
            loaded = list(config.enabled_roles)
            status = "ok"
        else:
            loaded = backend.loaded_roles()
            status = "ok" if loaded else "loading"
        return {"status": status, "loaded_roles": loaded}

    @app.post("/v1/complete")
    def complete(req: CompleteRequest):
        return run("completion", lambda: {"text": backend.complete(req.prompt, req.max_tokens, req.stop)})

    @app.post("/v1/vqa")
    def vqa(req: VqaRequest):
        return run("vqa", lambda: {"answer": backend.vqa(req.image_b64, req.question)})

    @app.post("/v1/caption")
    def caption(req: CaptionRequest):
        return run("caption", lambda: {"caption": backend.caption(req.image_b64, req.question)})

    @app.post("/v1/embed")
    def embed(req: EmbedRequest):
        if req.kind not in ("text", "image"):
            return JSONResponse(status_code=400, content={"error": f"unknown kind {req.kind!r}"})
        if req.kind == "text" and req.text is None:
            return JSONResponse(status_code=400, content={"error": "kind 'text' requires 'text'"})
        if req.kind == "image" and req.image_b64 is None:
            return JSONResponse(status_code=400, content={"error": "kind 'image' requires 'image_b64'"})

        def fn():
            payload = req.text if req.kind == "text" else req.image_b64
            vector = backend.embed(req.kind, payload)
            return {"vector": vector, "dim": len(vector)}

        return run("embed", fn)

    if not fixture_mode:
        from .live import ModelLoading

        @app.exception_handler(ModelLoading)
        async def model_loading(request: Request, exc: ModelLoading):
            return JSONResponse(status_code=503, content={"error": f"model for {exc} is loading"})

    return app
