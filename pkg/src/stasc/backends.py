"""Clients for the generation and trainer services.

The generation wire contract is the OpenAI-compatible chat-completions subset:
one user message, ``n`` sampled choices. The trainer contract is submit-and-poll:
``POST /jobs`` returns a job id, ``GET /jobs/{id}`` reports
``running | succeeded | failed``. A subprocess adapter covers trainers that are
scripts rather than services. Every call is recorded in the backend's audit
list (request metadata included) so tests can check the exact model sequence a
run produced.
"""
from __future__ import annotations

import json
import logging
import shlex
import shutil
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Protocol, runtime_checkable

import requests

from .core import ModelId, TrainerHyperparams
from .errors import (
    ConfigurationError,
    GenerationError,
    TrainingError,
    TransportError,
    UnknownModelError,
)

logger = logging.getLogger(__name__)

CHAT_COMPLETIONS_PATH = "/v1/chat/completions"
JOBS_PATH = "/jobs"


@dataclass(frozen=True)
class GenerationRequest:
    """One batched sampling request; ``num_samples`` choices come back."""

    model: ModelId
    prompt: str
    num_samples: int
    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = 512
    seed: int = 0
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.num_samples < 1:
            raise ConfigurationError("num_samples must be >= 1")


@dataclass(frozen=True)
class TrainRequest:
    """A fine-tuning job: base model, dataset, and pass-through hyperparameters."""

    base_model: ModelId
    dataset_path: Optional[str] = None
    records: Optional[tuple[dict, ...]] = None
    hyperparams: TrainerHyperparams = field(default_factory=TrainerHyperparams)
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dataset_path is None and not self.records:
            raise ConfigurationError("TrainRequest needs a dataset_path or inline records")
        if self.records is not None and len(self.records) == 0:
            raise ConfigurationError("TrainRequest dataset must be nonempty")


@runtime_checkable
class GenerationBackend(Protocol):
    def generate(self, req: GenerationRequest) -> list[str]: ...

    def ping(self) -> None: ...


@runtime_checkable
class TrainerBackend(Protocol):
    def train(self, req: TrainRequest) -> ModelId: ...

    def ping(self) -> None: ...


class AuditLog:
    """Thread-safe in-memory record of every backend call, in call order."""

    def __init__(self) -> None:
        self._entries: list[dict] = []
        self._lock = threading.Lock()

    def record(self, entry: dict) -> None:
        with self._lock:
            self._entries.append(entry)

    @property
    def entries(self) -> list[dict]:
        with self._lock:
            return list(self._entries)

    def generate_calls(self) -> list[dict]:
        return [e for e in self.entries if e["kind"] == "generate"]

    def train_calls(self) -> list[dict]:
        return [e for e in self.entries if e["kind"] == "train"]


def _auth_headers(token: Optional[str]) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return headers


def _error_message(resp: requests.Response) -> str:
    try:
        body = resp.json()
        if isinstance(body, dict) and "error" in body:
            err = body["error"]
            if isinstance(err, dict):
                return str(err.get("message", err))
            return str(err)
    except ValueError:
        pass
    return resp.text[:500]


class HttpGenerationBackend:
    """Chat-completions client with bounded retries and batched ``n`` sampling.

    Transport failures, 429s, and 5xx responses are retried with exponential
    backoff; 404 means the model is unknown and is fatal. If a server rejects
    a batched request (400 with n > 1), the client falls back to issuing one
    request per sample with derived seeds.
    """

    def __init__(
        self,
        endpoint: str,
        *,
        token: Optional[str] = None,
        max_retries: int = 3,
        retry_base_delay: float = 0.5,
        timeout: float = 120.0,
        audit: Optional[AuditLog] = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.token = token
        self.max_retries = max_retries
        self.retry_base_delay = retry_base_delay
        self.timeout = timeout
        self.audit = audit if audit is not None else AuditLog()

    def ping(self) -> None:
        url = self.endpoint + "/health"
        try:
            resp = requests.get(url, timeout=self.timeout)
            if resp.status_code >= 400:
                # Older servers may not expose /health; /v1/models is part of
                # the chat-completions surface.
                resp = requests.get(self.endpoint + "/v1/models", timeout=self.timeout)
                if resp.status_code >= 400:
                    raise TransportError(f"preflight got HTTP {resp.status_code} from {url}")
        except requests.RequestException as exc:
            raise TransportError(f"generation endpoint unreachable: {exc}") from exc

    def generate(self, req: GenerationRequest) -> list[str]:
        payload = {
            "model": req.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "n": req.num_samples,
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
            "seed": req.seed,
        }
        try:
            data, retries = self._post_with_retries(payload)
        except _BatchRejected:
            logger.warning(
                "server rejected n=%d batch for model %s; retrying per sample",
                req.num_samples,
                req.model,
            )
            return self._generate_per_sample(req)
        contents = self._extract_choices(data, req.num_samples)
        self.audit.record(
            {
                "kind": "generate",
                "model": req.model,
                "num_samples": req.num_samples,
                "seed": req.seed,
                "retries": retries,
                "metadata": dict(req.metadata),
            }
        )
        return contents

    def _generate_per_sample(self, req: GenerationRequest) -> list[str]:
        outs = []
        for i in range(req.num_samples):
            payload = {
                "model": req.model,
                "messages": [{"role": "user", "content": req.prompt}],
                "n": 1,
                "temperature": req.temperature,
                "top_p": req.top_p,
                "max_tokens": req.max_tokens,
                "seed": req.seed + i,
            }
            data, retries = self._post_with_retries(payload)
            outs.extend(self._extract_choices(data, 1))
            self.audit.record(
                {
                    "kind": "generate",
                    "model": req.model,
                    "num_samples": 1,
                    "seed": req.seed + i,
                    "retries": retries,
                    "metadata": dict(req.metadata),
                }
            )
        return outs

    def _post_with_retries(self, payload: dict) -> tuple[dict, int]:
        url = self.endpoint + CHAT_COMPLETIONS_PATH
        attempts = self.max_retries + 1
        last: Exception | None = None
        for attempt in range(attempts):
            try:
                resp = requests.post(
                    url,
                    json=payload,
                    headers=_auth_headers(self.token),
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last = TransportError(str(exc))
            else:
                if resp.status_code == 200:
                    return resp.json(), attempt
                if resp.status_code == 404:
                    raise UnknownModelError(
                        f"model {payload['model']!r} unknown to {self.endpoint}: "
                        f"{_error_message(resp)}"
                    )
                if resp.status_code == 400:
                    if payload.get("n", 1) > 1:
                        raise _BatchRejected()
                    raise GenerationError(
                        f"HTTP 400 from {url}: {_error_message(resp)}"
                    )
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = TransportError(f"HTTP {resp.status_code}: {_error_message(resp)}")
                else:
                    raise GenerationError(
                        f"HTTP {resp.status_code} from {url}: {_error_message(resp)}"
                    )
            if attempt < attempts - 1:
                delay = self.retry_base_delay * (2**attempt)
                logger.warning(
                    "generate attempt %d/%d failed (%s); retrying in %.2fs",
                    attempt + 1,
                    attempts,
                    last,
                    delay,
                )
                time.sleep(delay)
        raise GenerationError(f"sampling failed after {attempts} attempts: {last}")

    @staticmethod
    def _extract_choices(data: dict, expected: int) -> list[str]:
        choices = data.get("choices")
        if not isinstance(choices, list):
            raise GenerationError(f"malformed response: no choices list in {data!r}")
        ordered = sorted(choices, key=lambda c: c.get("index", 0))
        contents = [c["message"]["content"] for c in ordered]
        if len(contents) != expected:
            raise GenerationError(
                f"expected {expected} choices, server returned {len(contents)}"
            )
        return contents


class _BatchRejected(Exception):
    """Internal: server returned 400 for a batched (n > 1) request."""


class HttpTrainerBackend:
    """Submit-and-poll client for the trainer job service."""

    def __init__(
        self,
        endpoint: str,
        *,
        token: Optional[str] = None,
        poll_interval: float = 1.0,
        poll_timeout: float = 3600.0,
        max_retries: int = 3,
        retry_base_delay: float = 0.5,
        timeout: float = 120.0,
        audit: Optional[AuditLog] = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.token = token
        self.poll_interval = poll_interval
        self.poll_timeout = poll_timeout
        self.max_retries = max_retries
        self.retry_base_delay = retry_base_delay
        self.timeout = timeout
        self.audit = audit if audit is not None else AuditLog()
        self._lock = threading.Lock()  # at most one training job in flight

    def ping(self) -> None:
        try:
            resp = requests.get(self.endpoint + "/health", timeout=self.timeout)
            if resp.status_code >= 400:
                resp = requests.get(self.endpoint + JOBS_PATH, timeout=self.timeout)
                if resp.status_code >= 400:
                    raise TransportError(
                        f"preflight got HTTP {resp.status_code} from {self.endpoint}"
                    )
        except requests.RequestException as exc:
            raise TransportError(f"trainer endpoint unreachable: {exc}") from exc

    def train(self, req: TrainRequest) -> ModelId:
        with self._lock:
            job_id = self._submit(req)
            new_id, wall = self._wait(job_id)
        logger.info("training job %s finished in %.1fs -> %s", job_id, wall, new_id)
        self.audit.record(
            {
                "kind": "train",
                "base_model": req.base_model,
                "job_id": job_id,
                "new_model_id": new_id,
                "metadata": dict(req.metadata),
            }
        )
        return new_id

    def _submit(self, req: TrainRequest) -> str:
        payload = {
            "base_model": req.base_model,
            "dataset_path": req.dataset_path,
            "records": list(req.records) if req.records is not None else None,
            "hyperparams": {
                "epochs": req.hyperparams.epochs,
                "batch_size": req.hyperparams.batch_size,
                "learning_rate": req.hyperparams.learning_rate,
                "weight_decay": req.hyperparams.weight_decay,
                "schedule": req.hyperparams.schedule,
            },
            "metadata": dict(req.metadata),
        }
        data = self._request_with_retries(
            "POST", self.endpoint + JOBS_PATH, payload, error_cls=TrainingError
        )
        job_id = data.get("job_id")
        if not job_id:
            raise TrainingError(f"trainer returned no job_id: {data!r}")
        return str(job_id)

    def _wait(self, job_id: str) -> tuple[ModelId, float]:
        url = f"{self.endpoint}{JOBS_PATH}/{job_id}"
        start = time.monotonic()
        while True:
            data = self._request_with_retries("GET", url, None, error_cls=TrainingError)
            status = data.get("status")
            if status == "succeeded":
                new_id = data.get("new_model_id")
                if not new_id:
                    raise TrainingError(f"job {job_id} succeeded without a new_model_id")
                return str(new_id), time.monotonic() - start
            if status == "failed":
                raise TrainingError(
                    f"training job {job_id} failed: {data.get('reason', 'no reason given')}"
                )
            if status != "running":
                raise TrainingError(f"job {job_id} reported unknown status {status!r}")
            if time.monotonic() - start > self.poll_timeout:
                raise TrainingError(f"job {job_id} still running after {self.poll_timeout}s")
            time.sleep(self.poll_interval)

    def _request_with_retries(
        self, method: str, url: str, payload: Optional[dict], *, error_cls
    ) -> dict:
        attempts = self.max_retries + 1
        last: Exception | None = None
        for attempt in range(attempts):
            try:
                resp = requests.request(
                    method,
                    url,
                    json=payload,
                    headers=_auth_headers(self.token),
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last = TransportError(str(exc))
            else:
                if resp.status_code == 200:
                    return resp.json()
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = TransportError(f"HTTP {resp.status_code}: {_error_message(resp)}")
                else:
                    raise error_cls(
                        f"HTTP {resp.status_code} from {url}: {_error_message(resp)}"
                    )
            if attempt < attempts - 1:
                time.sleep(self.retry_base_delay * (2**attempt))
        raise error_cls(f"trainer request failed after {attempts} attempts: {last}")


class SubprocessTrainerBackend:
    """Adapter for trainers that are local commands, not services.

    The command is invoked with one argument: a job-spec JSON file containing
    the base model, dataset path, hyperparameters, and the path of the result
    file it must write ({"status": "succeeded", "new_model_id": ...} or
    {"status": "failed", "reason": ...}).
    """

    def __init__(
        self,
        command: str,
        *,
        workdir: Optional[str] = None,
        timeout: float = 3600.0,
        audit: Optional[AuditLog] = None,
    ) -> None:
        self.argv = shlex.split(command)
        if not self.argv:
            raise ConfigurationError("subprocess trainer command is empty")
        self.workdir = workdir
        self.timeout = timeout
        self.audit = audit if audit is not None else AuditLog()
        self._lock = threading.Lock()

    def ping(self) -> None:
        exe = self.argv[0]
        if shutil.which(exe) is None and not Path(exe).exists():
            raise TransportError(f"trainer command not found: {exe}")

    def train(self, req: TrainRequest) -> ModelId:
        with self._lock, tempfile.TemporaryDirectory(prefix="stasc-train-") as tmp:
            result_path = Path(tmp) / "result.json"
            spec = {
                "base_model": req.base_model,
                "dataset_path": req.dataset_path,
                "records": list(req.records) if req.records is not None else None,
                "hyperparams": {
                    "epochs": req.hyperparams.epochs,
                    "batch_size": req.hyperparams.batch_size,
                    "learning_rate": req.hyperparams.learning_rate,
                    "weight_decay": req.hyperparams.weight_decay,
                    "schedule": req.hyperparams.schedule,
                },
                "result_path": str(result_path),
            }
            spec_path = Path(tmp) / "jobspec.json"
            spec_path.write_text(json.dumps(spec, indent=2), encoding="utf-8")
            try:
                proc = subprocess.run(
                    self.argv + [str(spec_path)],
                    cwd=self.workdir,
                    capture_output=True,
                    text=True,
                    timeout=self.timeout,
                )
            except subprocess.TimeoutExpired:
                raise TrainingError(f"trainer command timed out after {self.timeout}s")
            if proc.returncode != 0:
                raise TrainingError(
                    f"trainer command exited {proc.returncode}: {proc.stderr[-500:]}"
                )
            if not result_path.exists():
                raise TrainingError("trainer command wrote no result file")
            result = json.loads(result_path.read_text(encoding="utf-8"))
            if result.get("status") != "succeeded":
                raise TrainingError(
                    f"trainer failed: {result.get('reason', 'no reason given')}"
                )
            new_id = str(result["new_model_id"])
        self.audit.record(
            {
                "kind": "train",
                "base_model": req.base_model,
                "job_id": "subprocess",
                "new_model_id": new_id,
                "metadata": dict(req.metadata),
            }
        )
        return new_id
