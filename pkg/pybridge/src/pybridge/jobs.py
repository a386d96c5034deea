"""Training-job lifecycle: submit returns immediately, one job trains at a time."""
from __future__ import annotations

import logging
import queue
import threading
from typing import Optional

from .registry import ServedModelRegistry, UnknownModel, digest_job
from .runtime import GenerationRuntime
from .training import DatasetFormatError, Hyperparams, load_dataset, train_checkpoint

logger = logging.getLogger(__name__)


class JobRunner:
    """Queued single-worker trainer; results are polled by job id."""

    def __init__(
        self,
        registry: ServedModelRegistry,
        runtime: GenerationRuntime,
        *,
        train_mode: str = "lora",
        device: str = "cpu",
    ) -> None:
        self.registry = registry
        self.runtime = runtime
        self.train_mode = train_mode
        self.device = device
        self._results: dict[str, dict] = {}
        self._queue: "queue.Queue[Optional[tuple[str, dict]]]" = queue.Queue()
        self._counter = 0
        self._lock = threading.Lock()
        self._worker = threading.Thread(target=self._loop, daemon=True)
        self._worker.start()

    def submit(self, payload: dict) -> str:
        with self._lock:
            self._counter += 1
            job_id = f"job-{self._counter:06d}"
            self._results[job_id] = {"status": "running"}
        self._queue.put((job_id, payload))
        return job_id

    def poll(self, job_id: str) -> Optional[dict]:
        with self._lock:
            result = self._results.get(job_id)
            return dict(result) if result is not None else None

    def shutdown(self) -> None:
        self._queue.put(None)
        self._worker.join(timeout=30)

    def join_job(self, job_id: str, timeout: float = 600.0) -> dict:
        """Testing helper: block until the job leaves 'running'."""
        import time

        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            result = self.poll(job_id)
            if result and result["status"] != "running":
                return result
            time.sleep(0.05)
        raise TimeoutError(f"job {job_id} still running after {timeout}s")

    def _loop(self) -> None:
        while True:
            entry = self._queue.get()
            if entry is None:
                return
            job_id, payload = entry
            try:
                result = self._run(job_id, payload)
            except (DatasetFormatError, UnknownModel, ValueError) as exc:
                result = {"status": "failed", "reason": str(exc)}
            except Exception as exc:  # OOM, torch errors: report, keep serving
                logger.exception("job %s crashed", job_id)
                result = {"status": "failed", "reason": f"{type(exc).__name__}: {exc}"}
            with self._lock:
                self._results[job_id] = result

    def _run(self, job_id: str, payload: dict) -> dict:
        base_id = str(payload.get("base_model") or "")
        base_dir = self.registry.resolve(base_id)
        rows, dataset_digest = load_dataset(
            payload.get("dataset_path"), payload.get("records")
        )
        hp = Hyperparams.from_dict(payload.get("hyperparams") or {})
        with self._lock:
            job_number = self._counter
        digest = digest_job(
            base_id,
            dataset_digest,
            payload.get("hyperparams") or {},
            job_number,
        )
        new_id, out_dir = self.registry.child_id_and_dir(digest)
        stats = train_checkpoint(
            base_dir,
            out_dir,
            rows,
            hp,
            mode=str(payload.get("mode") or self.train_mode),
            device=self.device,
        )
        # Register before reporting success so the id is generatable immediately.
        self.registry.register(new_id, out_dir, base_id=base_id)
        logger.info(
            "job %s: trained %s from %s on %d records (%s)",
            job_id,
            new_id,
            base_id,
            len(rows),
            stats,
        )
        return {"status": "succeeded", "new_model_id": new_id}
