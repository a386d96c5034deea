"""Serves a MockBackend over the HTTP wire contracts, for integration tests.

Endpoints: GET /health, GET /v1/models, POST /v1/chat/completions,
POST /jobs, GET /jobs/{id}. Scripted faults map to their HTTP statuses so
client retry behavior can be exercised end to end.
"""
from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .backends import GenerationRequest, TrainRequest
from .core import TrainerHyperparams
from .errors import TrainingError, UnknownModelError
from .mock import MockBackend, MockHttpFault, MockScript
from .util import sha_hex

logger = logging.getLogger(__name__)


class _JobStore:
    """Completed-job results plus a scripted number of 'running' polls."""

    def __init__(self, delay_polls: int) -> None:
        self._jobs: dict[str, dict] = {}
        self._polls_left: dict[str, int] = {}
        self._delay_polls = delay_polls
        self._counter = 0
        self._lock = threading.Lock()

    def add(self, result: dict) -> str:
        with self._lock:
            self._counter += 1
            job_id = f"job-{self._counter:06d}"
            self._jobs[job_id] = result
            self._polls_left[job_id] = self._delay_polls
            return job_id

    def poll(self, job_id: str) -> Optional[dict]:
        with self._lock:
            if job_id not in self._jobs:
                return None
            if self._polls_left[job_id] > 0:
                self._polls_left[job_id] -= 1
                return {"status": "running"}
            return self._jobs[job_id]


class MockRequestHandler(BaseHTTPRequestHandler):
    server_version = "stasc-mock"
    backend: MockBackend  # set via server attribute
    jobs: _JobStore

    # Silence the default stderr-per-request logging.
    def log_message(self, fmt: str, *args) -> None:
        logger.debug("mockserver: " + fmt, *args)

    def _send(self, status: int, body: dict) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _error(self, status: int, message: str, code: str = "invalid_request_error") -> None:
        self._send(status, {"error": {"message": message, "type": code, "code": code}})

    def _read_json(self) -> Optional[dict]:
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw)
        except json.JSONDecodeError:
            return None
        return body if isinstance(body, dict) else None

    def do_GET(self) -> None:  # noqa: N802 (http.server API)
        backend = self.server.backend  # type: ignore[attr-defined]
        jobs = self.server.jobs  # type: ignore[attr-defined]
        if self.path == "/health":
            self._send(200, {"status": "ok"})
        elif self.path == "/v1/models":
            models = sorted(backend.script.known_models)
            self._send(
                200,
                {"object": "list", "data": [{"id": m, "object": "model"} for m in models]},
            )
        elif self.path == "/jobs":
            self._send(200, {"jobs": []})
        elif self.path.startswith("/jobs/"):
            job_id = self.path[len("/jobs/"):]
            result = jobs.poll(job_id)
            if result is None:
                self._error(404, f"unknown job {job_id!r}", code="job_not_found")
            else:
                self._send(200, result)
        else:
            self._error(404, f"no route {self.path}", code="not_found")

    def do_POST(self) -> None:  # noqa: N802
        backend = self.server.backend  # type: ignore[attr-defined]
        jobs = self.server.jobs  # type: ignore[attr-defined]
        body = self._read_json()
        if body is None:
            self._error(400, "request body is not a JSON object")
            return
        if self.path == "/v1/chat/completions":
            self._chat_completions(backend, body)
        elif self.path == "/jobs":
            self._submit_job(backend, jobs, body)
        else:
            self._error(404, f"no route {self.path}", code="not_found")

    def _chat_completions(self, backend: MockBackend, body: dict) -> None:
        try:
            messages = body["messages"]
            prompt = messages[-1]["content"]
            req = GenerationRequest(
                model=str(body["model"]),
                prompt=str(prompt),
                num_samples=int(body.get("n", 1)),
                temperature=float(body.get("temperature", 1.0)),
                top_p=float(body.get("top_p", 1.0)),
                max_tokens=int(body.get("max_tokens", 512)),
                seed=int(body.get("seed", 0)),
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            self._error(400, f"malformed chat-completions request: {exc}")
            return
        try:
            outs = backend.generate(req)
        except UnknownModelError as exc:
            self._error(404, str(exc), code="model_not_found")
            return
        except MockHttpFault as exc:
            self._error(exc.status, "scripted fault", code="scripted_fault")
            return
        self._send(
            200,
            {
                "id": "chatcmpl-" + sha_hex(f"{req.model}|{req.seed}|{req.prompt}")[:12],
                "object": "chat.completion",
                "model": req.model,
                "choices": [
                    {
                        "index": i,
                        "message": {"role": "assistant", "content": text},
                        "finish_reason": "stop",
                    }
                    for i, text in enumerate(outs)
                ],
            },
        )

    def _submit_job(self, backend: MockBackend, jobs: _JobStore, body: dict) -> None:
        hp = body.get("hyperparams") or {}
        try:
            records = body.get("records")
            req = TrainRequest(
                base_model=str(body["base_model"]),
                dataset_path=body.get("dataset_path"),
                records=tuple(records) if records else None,
                hyperparams=TrainerHyperparams(
                    epochs=int(hp.get("epochs", 1)),
                    batch_size=int(hp.get("batch_size", 8)),
                    learning_rate=float(hp.get("learning_rate", 7e-6)),
                    weight_decay=float(hp.get("weight_decay", 0.1)),
                    schedule=str(hp.get("schedule", "cosine")),
                ),
                metadata=body.get("metadata") or {},
            )
        except (KeyError, TypeError, ValueError) as exc:
            self._error(400, f"malformed train request: {exc}")
            return
        try:
            new_id = backend.train(req)
            result = {"status": "succeeded", "new_model_id": new_id}
        except TrainingError as exc:
            result = {"status": "failed", "reason": str(exc)}
        job_id = jobs.add(result)
        self._send(200, {"job_id": job_id})


class MockServer:
    """A ThreadingHTTPServer wrapping one MockBackend; use as a context manager."""

    def __init__(self, script: MockScript, host: str = "127.0.0.1", port: int = 0) -> None:
        self.backend = MockBackend(script)
        self.httpd = ThreadingHTTPServer((host, port), MockRequestHandler)
        self.httpd.backend = self.backend  # type: ignore[attr-defined]
        self.httpd.jobs = _JobStore(script.train_delay_polls)  # type: ignore[attr-defined]
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_forever(script_path: str, host: str, port: int) -> None:
    """Blocking entry point for the mock-serve CLI command."""
    script = MockScript.from_file(script_path)
    server = MockServer(script, host=host, port=port)
    print(f"mock backend listening on {server.url}")
    try:
        server.httpd.serve_forever()
    except KeyboardInterrupt:
        server.stop()
