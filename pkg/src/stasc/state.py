"""Persisted run state: per-iteration records and model-role resolution.

The state file is the single source of truth for resume: each iteration
records which step boundaries were committed, the resolved model roles, the
filter counts, and the produced model id. Everything in it is deterministic
for a fixed (config, seed, backend script), so a resumed run converges to the
same bytes as an uninterrupted one.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from .core import (
    FilterMode,
    FinetuneMode,
    InitMode,
    ModelId,
    parse_variant_code,
)
from .errors import StateIntegrityError

STATUSES = (
    "pending",
    "sampling_initial",
    "sampling_corrections",
    "filtering",
    "training",
    "evaluating",
    "done",
    "failed",
)

STEP_INITIAL = "initial"
STEP_CORRECTIONS = "corrections"
STEP_FILTER = "filter"
STEP_TRAIN = "train"
STEP_EVAL = "eval"


@dataclass
class IterationRecord:
    """Everything the run remembers about one loop iteration."""

    n: int
    generator: ModelId
    corrector: ModelId
    finetune_base: ModelId
    steps_done: list[str] = field(default_factory=list)
    produced_model: Optional[ModelId] = None
    trained: bool = False
    train_job_id: Optional[str] = None
    counts: dict[str, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    metrics: Optional[dict] = None

    def step_done(self, step: str) -> bool:
        return step in self.steps_done

    def mark_step(self, step: str) -> None:
        if step not in self.steps_done:
            self.steps_done.append(step)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "IterationRecord":
        return cls(**data)


@dataclass
class RunState:
    """The atomic-rewrite state file contents."""

    run_id: str
    seed: int
    base_model: ModelId
    config: dict
    status: str = "pending"
    error: Optional[str] = None
    iterations: list[IterationRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise StateIntegrityError(f"unknown run status {self.status!r}")

    # -- record access ------------------------------------------------------

    def record_for(self, n: int) -> Optional[IterationRecord]:
        for rec in self.iterations:
            if rec.n == n:
                return rec
        return None

    def add_record(self, rec: IterationRecord) -> None:
        expected = len(self.iterations) + 1
        if rec.n != expected:
            raise StateIntegrityError(
                f"iteration records must be contiguous: got n={rec.n}, expected {expected}"
            )
        self.iterations.append(rec)

    def model_after(self, n: int) -> ModelId:
        """The model state entering iteration n+1: M_0 for n=0, else produced M_n."""
        if n == 0:
            return self.base_model
        rec = self.record_for(n)
        if rec is None or rec.produced_model is None:
            raise StateIntegrityError(
                f"iteration {n} has no produced model; cannot resolve M_{n}"
            )
        return rec.produced_model

    def known_model_ids(self) -> set[ModelId]:
        ids = {self.base_model}
        for rec in self.iterations:
            if rec.produced_model:
                ids.add(rec.produced_model)
        return ids

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "seed": self.seed,
            "base_model": self.base_model,
            "config": self.config,
            "status": self.status,
            "error": self.error,
            "iterations": [rec.to_dict() for rec in self.iterations],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunState":
        return cls(
            run_id=data["run_id"],
            seed=data["seed"],
            base_model=data["base_model"],
            config=data["config"],
            status=data["status"],
            error=data.get("error"),
            iterations=[IterationRecord.from_dict(d) for d in data.get("iterations", [])],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunState":
        return cls.from_dict(json.loads(text))

    # -- variant axes -------------------------------------------------------

    @property
    def variant_code(self) -> str:
        return str(self.config["variant"])

    def axes(self) -> tuple[InitMode, FilterMode, FinetuneMode]:
        return parse_variant_code(self.variant_code)


def resolve_models(state: RunState, n: int) -> tuple[ModelId, ModelId, ModelId]:
    """Resolve (generator, corrector, finetune_base) for iteration n.

    The corrector is always the previous-iteration model regardless of
    variant; the generator and fine-tune base depend on their axes. At n=1
    everything collapses to the base model.
    """
    if n < 1:
        raise StateIntegrityError(f"iteration index must be >= 1, got {n}")
    init_mode, _filter_mode, finetune_mode = state.axes()
    previous = state.model_after(n - 1)
    generator = state.base_model if init_mode is InitMode.FIXED else previous
    finetune_base = state.base_model if finetune_mode is FinetuneMode.FIXED else previous
    return generator, previous, finetune_base
