"""Model registry: id -> checkpoint directory, plus fine-tuning lineage."""
from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path
from typing import Optional


class UnknownModel(KeyError):
    def __init__(self, model_id: str) -> None:
        super().__init__(model_id)
        self.model_id = model_id

    def __str__(self) -> str:
        return f"model {self.model_id!r} is not registered"


class ServedModelRegistry:
    """Thread-safe map of served model ids; trained children are content-addressed.

    A child id is derived from a hash of its full job description (base id,
    dataset digest, hyperparameters, job number), so every training job gets a
    fresh id and its directory name is auditable. Lineage (child -> base) is
    persisted next to the checkpoints.
    """

    def __init__(self, models_dir: Path) -> None:
        self.models_dir = Path(models_dir)
        self.models_dir.mkdir(parents=True, exist_ok=True)
        self._dirs: dict[str, Path] = {}
        self._lineage: dict[str, str] = {}
        self._lock = threading.Lock()

    def register(self, model_id: str, directory: Path, base_id: Optional[str] = None) -> None:
        with self._lock:
            if model_id in self._dirs:
                raise ValueError(f"model id {model_id!r} already registered")
            self._dirs[model_id] = Path(directory)
            if base_id is not None:
                self._lineage[model_id] = base_id
            self._persist_locked()

    def resolve(self, model_id: str) -> Path:
        with self._lock:
            try:
                return self._dirs[model_id]
            except KeyError:
                raise UnknownModel(model_id) from None

    def known_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._dirs)

    def lineage(self) -> dict[str, str]:
        with self._lock:
            return dict(self._lineage)

    def child_id_and_dir(self, payload_digest: str) -> tuple[str, Path]:
        new_id = f"ft-{payload_digest[:12]}"
        return new_id, self.models_dir / new_id

    def _persist_locked(self) -> None:
        snapshot = {
            "models": {mid: str(path) for mid, path in self._dirs.items()},
            "lineage": dict(self._lineage),
        }
        (self.models_dir / "registry.json").write_text(
            json.dumps(snapshot, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def digest_job(base_id: str, dataset_digest: str, hyperparams: dict, job_number: int) -> str:
    blob = json.dumps(
        {
            "base": base_id,
            "dataset": dataset_digest,
            "hyperparams": hyperparams,
            "job": job_number,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
