"""FastAPI app implementing the generation and trainer wire contracts.

Routes and bodies mirror the scripted mock server exactly: /health,
/v1/models, /v1/chat/completions (one user message, n choices), /jobs submit,
/jobs/{id} poll. Errors use the same {"error": {message, type, code}} shape
and status codes, so the shared conformance suite cannot tell the two apart.
"""
from __future__ import annotations

import hashlib
import logging
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .jobs import JobRunner
from .registry import ServedModelRegistry, UnknownModel
from .runtime import GenerationRuntime, PromptTooLong

logger = logging.getLogger(__name__)


def _error(status: int, message: str, code: str = "invalid_request_error") -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"error": {"message": message, "type": code, "code": code}},
    )


def create_app(
    model_dir: str | Path,
    *,
    model_id: str | None = None,
    models_dir: str | Path | None = None,
    train_mode: str = "lora",
    device: str = "cpu",
) -> FastAPI:
    model_dir = Path(model_dir)
    model_id = model_id or model_dir.name
    models_dir = Path(models_dir) if models_dir else model_dir.parent / "trained"
    registry = ServedModelRegistry(models_dir)
    registry.register(model_id, model_dir)
    runtime = GenerationRuntime(registry, device=device)
    jobs = JobRunner(registry, runtime, train_mode=train_mode, device=device)

    app = FastAPI(title="pybridge", version="0.1.0")
    app.state.registry = registry
    app.state.runtime = runtime
    app.state.jobs = jobs

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/v1/models")
    def models():
        return {
            "object": "list",
            "data": [{"id": mid, "object": "model"} for mid in registry.known_ids()],
        }

    @app.post("/v1/chat/completions")
    async def chat_completions(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")
        try:
            model = str(body["model"])
            messages = body["messages"]
            prompt = str(messages[-1]["content"])
            num_samples = int(body.get("n", 1))
            temperature = float(body.get("temperature", 1.0))
            top_p = float(body.get("top_p", 1.0))
            max_tokens = int(body.get("max_tokens", 64))
            seed = int(body.get("seed", 0))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            return _error(400, f"malformed chat-completions request: {exc}")
        if num_samples < 1:
            return _error(400, "n must be >= 1")
        try:
            texts = runtime.generate(
                model,
                prompt,
                num_samples=num_samples,
                temperature=temperature,
                top_p=top_p,
                max_tokens=max_tokens,
                seed=seed,
            )
        except UnknownModel as exc:
            return _error(404, str(exc), code="model_not_found")
        except PromptTooLong as exc:
            return _error(400, str(exc), code="context_length_exceeded")
        digest = hashlib.sha256(f"{model}|{seed}|{prompt}".encode("utf-8")).hexdigest()
        return {
            "id": f"chatcmpl-{digest[:12]}",
            "object": "chat.completion",
            "model": model,
            "choices": [
                {
                    "index": i,
                    "message": {"role": "assistant", "content": text},
                    "finish_reason": "stop",
                }
                for i, text in enumerate(texts)
            ],
        }

    @app.get("/jobs")
    def list_jobs():
        return {"jobs": []}

    @app.post("/jobs")
    async def submit_job(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")
        if not isinstance(body, dict) or not body.get("base_model"):
            return _error(400, "train request needs a base_model")
        job_id = jobs.submit(body)
        return {"job_id": job_id}

    @app.get("/jobs/{job_id}")
    def poll_job(job_id: str):
        result = jobs.poll(job_id)
        if result is None:
            return _error(404, f"unknown job {job_id!r}", code="job_not_found")
        return result

    return app
