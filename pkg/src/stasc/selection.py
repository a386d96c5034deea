"""Correction filtering and fine-tuning dataset construction.

The improving filter keeps trajectories whose correction reward strictly
exceeds the initial reward. The non-decreasing filter additionally keeps
reward-preserving trajectories whose initial reward meets the threshold, so
already-correct answers stay in the training pool. The dataset builder turns
selected trajectories into (context, target) records where the context is
byte-equal to the correction prompt actually sent at sampling time and loss
applies to the target only.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

from .core import Trajectory
from .errors import StateIntegrityError
from .util import canonical_json, sha_hex

logger = logging.getLogger(__name__)

LOSS_ON_TARGET = "target"


@dataclass(frozen=True)
class FilterOutcome:
    """Step-3 result: strict improvers, reward-preservers, and their union."""

    improving: tuple[Trajectory, ...]
    equal_kept: tuple[Trajectory, ...]
    selected: tuple[Trajectory, ...]
    per_item: dict[str, dict[str, int]] = field(default_factory=dict)


def _per_item_counts(
    improving: Sequence[Trajectory], equal_kept: Sequence[Trajectory]
) -> dict[str, dict[str, int]]:
    imp = Counter(t.item.id for t in improving)
    eq = Counter(t.item.id for t in equal_kept)
    return {
        item_id: {
            "improving": imp.get(item_id, 0),
            "equal_kept": eq.get(item_id, 0),
            "selected": imp.get(item_id, 0) + eq.get(item_id, 0),
        }
        for item_id in sorted(set(imp) | set(eq))
    }


def filter_improving(trajectories: Sequence[Trajectory]) -> FilterOutcome:
    """Keep exactly the trajectories with reward_correction > reward_initial."""
    improving = tuple(t for t in trajectories if t.reward_correction > t.reward_initial)
    return FilterOutcome(
        improving=improving,
        equal_kept=(),
        selected=improving,
        per_item=_per_item_counts(improving, ()),
    )


def filter_non_decreasing(trajectories: Sequence[Trajectory], threshold: float) -> FilterOutcome:
    """Keep strict improvers plus reward-preserving trajectories at or above the threshold."""
    improving = []
    equal_kept = []
    selected = []
    for t in trajectories:
        if t.reward_correction > t.reward_initial:
            improving.append(t)
            selected.append(t)
        elif t.reward_correction == t.reward_initial and t.reward_initial >= threshold:
            equal_kept.append(t)
            selected.append(t)
    return FilterOutcome(
        improving=tuple(improving),
        equal_kept=tuple(equal_kept),
        selected=tuple(selected),
        per_item=_per_item_counts(improving, equal_kept),
    )


@dataclass(frozen=True)
class FinetuneRecord:
    """One training example; only the target receives loss."""

    context: str
    target: str
    loss_on: str = LOSS_ON_TARGET

    def to_row(self) -> dict:
        return {"context": self.context, "target": self.target, "loss_on": self.loss_on}


class PromptLookup(Protocol):
    """Resolves a content hash to the prompt text that was sampled with."""

    def __contains__(self, sha: str) -> bool: ...

    def __getitem__(self, sha: str) -> str: ...


def build_finetune_dataset(
    outcome: FilterOutcome,
    prompts: PromptLookup,
    *,
    max_per_item: Optional[int] = None,
    dedupe: bool = False,
) -> list[FinetuneRecord]:
    """One record per selected trajectory, ordered by (item, initial, correction).

    The context is recovered from the logged prompt store and re-verified
    against the trajectory's recorded content hash, so the trainer sees the
    exact bytes the corrector was conditioned on. ``max_per_item`` caps records
    per item for stricter selection; ``dedupe`` drops identical
    (context, target) pairs. Both default off: the filter formulas quantify
    over every sample.
    """
    ordered = sorted(
        outcome.selected,
        key=lambda t: (t.item.id, t.correction.initial_index, t.correction.correction_index),
    )
    records: list[FinetuneRecord] = []
    seen: set[tuple[str, str]] = set()
    taken: Counter[str] = Counter()
    for traj in ordered:
        sha = traj.correction.prompt_sha
        key = (
            f"item={traj.item.id} initial={traj.correction.initial_index} "
            f"correction={traj.correction.correction_index}"
        )
        if sha not in prompts:
            raise StateIntegrityError(f"no logged correction prompt for trajectory {key}")
        context = prompts[sha]
        if sha_hex(context) != sha:
            raise StateIntegrityError(f"logged prompt hash mismatch for trajectory {key}")
        if not traj.correction.raw_text:
            raise StateIntegrityError(f"empty correction text for trajectory {key}")
        if max_per_item is not None and taken[traj.item.id] >= max_per_item:
            continue
        record = FinetuneRecord(context=context, target=traj.correction.raw_text)
        if dedupe:
            pair = (record.context, record.target)
            if pair in seen:
                continue
            seen.add(pair)
        taken[traj.item.id] += 1
        records.append(record)
    if records:
        distinct = len({(r.context, r.target) for r in records})
        ratio = 1.0 - distinct / len(records)
        if ratio > 0:
            logger.info("finetune dataset duplication ratio: %.3f", ratio)
    return records


def serialize_finetune_records(records: Sequence[FinetuneRecord]) -> bytes:
    """The on-disk dataset format: one compact JSON object per line."""
    return "".join(canonical_json(r.to_row()) + "\n" for r in records).encode("utf-8")


def validate_finetune_rows(text: str) -> list[dict]:
    """Parse dataset file text, raising ValueError naming the bad line."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"dataset line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(row, dict) or "context" not in row or "target" not in row:
            raise ValueError(f"dataset line {lineno}: missing context/target field")
        if not str(row["target"]):
            raise ValueError(f"dataset line {lineno}: empty target")
        rows.append(row)
    return rows


def load_finetune_records(path: str | Path) -> list[dict]:
    return validate_finetune_rows(Path(path).read_text(encoding="utf-8"))
