"""Deterministic scripted mock implementing both backend contracts.

A MockScript declares the items the mock knows about, response rules matched
in order, an optional per-model skill table used when no rule matches, and
fault-injection rules. Identical (script, request) pairs always produce
identical outputs: every stochastic choice derives from the request seed via a
stable hash, never from process state.

The mock identifies the item and stage by reading the prompt the same way a
model would see it (the last "Question:" line, and whether an "Initial
Answer:" slot follows), so it behaves identically in process and behind the
wire server.
"""
from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from fnmatch import fnmatch
from pathlib import Path
from typing import Iterable, Optional, Sequence

import yaml

from .backends import AuditLog, GenerationRequest, TrainRequest
from .core import ModelId, QAItem
from .errors import ConfigurationError, TrainingError, TransportError, UnknownModelError
from .prompts import parse_final_answer
from .reward import in_accuracy
from .selection import validate_finetune_rows
from .util import hash01

_FT_SUFFIX = re.compile(r"(\+ft\d+)+$")


@dataclass(frozen=True)
class MockItem:
    id: str
    question: str
    answer: str


@dataclass(frozen=True)
class MockRule:
    """First matching rule wins; unset match fields are wildcards."""

    respond: str = "wrong"  # correct | wrong | unparseable
    text: Optional[str] = None  # literal template overriding `respond`
    stage: Optional[str] = None  # initial | correction
    model: Optional[str] = None  # glob
    item: Optional[str] = None
    index: Optional[int] = None
    initial_correct: Optional[bool] = None

    def matches(
        self,
        model: str,
        stage: str,
        item_id: Optional[str],
        index: int,
        initial_correct: Optional[bool],
    ) -> bool:
        if self.stage is not None and self.stage != stage:
            return False
        if self.model is not None and not fnmatch(model, self.model):
            return False
        if self.item is not None and self.item != item_id:
            return False
        if self.index is not None and self.index != index:
            return False
        if self.initial_correct is not None and self.initial_correct != bool(initial_correct):
            return False
        return True


@dataclass(frozen=True)
class MockSkill:
    """Fallback right/wrong synthesis rates for models matching a glob."""

    model: str
    initial_correct_rate: float = 0.0
    correction_fix_rate: float = 0.0
    correction_keep_rate: float = 1.0


@dataclass
class MockFault:
    """Fail matching generate calls `times` times (None means forever)."""

    kind: str = "transport"  # transport | http_429 | http_500
    stage: Optional[str] = None
    model: Optional[str] = None
    item: Optional[str] = None
    times: Optional[int] = 1

    def matches(self, model: str, stage: str, item_id: Optional[str]) -> bool:
        if self.stage is not None and self.stage != stage:
            return False
        if self.model is not None and not fnmatch(model, self.model):
            return False
        if self.item is not None and self.item != item_id:
            return False
        return True


@dataclass(frozen=True)
class MockScript:
    items: tuple[MockItem, ...] = ()
    rules: tuple[MockRule, ...] = ()
    skills: tuple[MockSkill, ...] = ()
    faults: tuple[MockFault, ...] = ()
    # Model ids the mock serves; empty means "serve anything". Fine-tuned
    # derivatives (id + "+ftN"...) of a known model are always known.
    known_models: tuple[str, ...] = ()
    train_faults: int = 0
    train_delay_polls: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "MockScript":
        items = tuple(
            MockItem(id=str(d["id"]), question=str(d["question"]), answer=str(d["answer"]))
            for d in data.get("items", [])
        )
        rules = []
        for d in data.get("rules", []):
            match = d.get("match", {})
            respond = d.get("respond", "wrong")
            text = None
            if isinstance(respond, dict):
                text = respond.get("text")
                respond = "text"
            rules.append(
                MockRule(
                    respond=str(respond),
                    text=text,
                    stage=match.get("stage"),
                    model=match.get("model"),
                    item=match.get("item"),
                    index=match.get("index"),
                    initial_correct=match.get("initial_correct"),
                )
            )
        skills = tuple(
            MockSkill(
                model=str(d["model"]),
                initial_correct_rate=float(d.get("initial_correct_rate", 0.0)),
                correction_fix_rate=float(d.get("correction_fix_rate", 0.0)),
                correction_keep_rate=float(d.get("correction_keep_rate", 1.0)),
            )
            for d in data.get("skills", [])
        )
        faults = tuple(
            MockFault(
                kind=str(d.get("kind", "transport")),
                stage=d.get("match", {}).get("stage"),
                model=d.get("match", {}).get("model"),
                item=d.get("match", {}).get("item"),
                times=d.get("times", 1),
            )
            for d in data.get("faults", [])
        )
        return cls(
            items=items,
            rules=tuple(rules),
            skills=skills,
            faults=faults,
            known_models=tuple(data.get("known_models", [])),
            train_faults=int(data.get("train_faults", 0)),
            train_delay_polls=int(data.get("train_delay_polls", 0)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "MockScript":
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ConfigurationError(f"mock script {path} must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def for_items(
        cls,
        items: Iterable[QAItem],
        *,
        rules: Sequence[MockRule] = (),
        skills: Sequence[MockSkill] = (),
        faults: Sequence[MockFault] = (),
        known_models: Sequence[str] = (),
        train_faults: int = 0,
        train_delay_polls: int = 0,
    ) -> "MockScript":
        """Build a script whose item table mirrors a QA dataset."""
        mock_items = tuple(
            MockItem(id=i.id, question=i.question, answer=i.references[0]) for i in items
        )
        return cls(
            items=mock_items,
            rules=tuple(rules),
            skills=tuple(skills),
            faults=tuple(faults),
            known_models=tuple(known_models),
            train_faults=train_faults,
            train_delay_polls=train_delay_polls,
        )


class MockHttpFault(TransportError):
    """A scripted fault that the wire server maps to an HTTP status."""

    def __init__(self, status: int) -> None:
        super().__init__(f"scripted HTTP {status}")
        self.status = status


class MockBackend:
    """Scripted generation + trainer backend; deterministic and thread-safe."""

    def __init__(self, script: MockScript) -> None:
        self.script = script
        self.audit = AuditLog()
        self._by_question = {i.question.strip(): i for i in script.items}
        self._fault_budget = [f.times for f in script.faults]
        self._train_fault_budget = script.train_faults
        self._train_counter = 0
        self._lock = threading.Lock()

    # -- generation -------------------------------------------------------

    def ping(self) -> None:
        return None

    def knows_model(self, model: ModelId) -> bool:
        if not self.script.known_models:
            return True
        root = _FT_SUFFIX.sub("", model)
        return root in self.script.known_models

    def generate(self, req: GenerationRequest) -> list[str]:
        if not self.knows_model(req.model):
            raise UnknownModelError(f"mock does not serve model {req.model!r}")
        stage, item, initial_correct = self._analyze_prompt(req.prompt)
        item_id = item.id if item else None
        self._maybe_fault(req.model, stage, item_id)
        outs = [
            self._respond(req, stage, item, idx, initial_correct)
            for idx in range(req.num_samples)
        ]
        self.audit.record(
            {
                "kind": "generate",
                "model": req.model,
                "stage": stage,
                "item_id": item_id,
                "num_samples": req.num_samples,
                "seed": req.seed,
                "metadata": dict(req.metadata),
            }
        )
        return outs

    def _maybe_fault(self, model: str, stage: str, item_id: Optional[str]) -> None:
        with self._lock:
            for i, fault in enumerate(self.script.faults):
                if not fault.matches(model, stage, item_id):
                    continue
                budget = self._fault_budget[i]
                if budget is None:
                    pass  # unlimited
                elif budget <= 0:
                    continue
                else:
                    self._fault_budget[i] = budget - 1
                if fault.kind == "http_429":
                    raise MockHttpFault(429)
                if fault.kind == "http_500":
                    raise MockHttpFault(500)
                raise TransportError("scripted transport fault")

    def _analyze_prompt(self, prompt: str) -> tuple[str, Optional[MockItem], Optional[bool]]:
        qpos = prompt.rfind("Question:")
        item = None
        if qpos >= 0:
            line = prompt[qpos + len("Question:"):].split("\n", 1)[0].strip()
            item = self._by_question.get(line)
        tail = prompt[qpos:] if qpos >= 0 else prompt
        apos = tail.find("Initial Answer:")
        if apos < 0:
            return "initial", item, None
        initial_correct = None
        if item is not None:
            slot = tail[apos + len("Initial Answer:"):]
            parsed = parse_final_answer(slot)
            initial_correct = in_accuracy(parsed, (item.answer,)) >= 1.0
        return "correction", item, initial_correct

    def _respond(
        self,
        req: GenerationRequest,
        stage: str,
        item: Optional[MockItem],
        idx: int,
        initial_correct: Optional[bool],
    ) -> str:
        item_id = item.id if item else None
        behavior = None
        text = None
        for rule in self.script.rules:
            if rule.matches(req.model, stage, item_id, idx, initial_correct):
                behavior, text = rule.respond, rule.text
                break
        if behavior is None:
            behavior = self._skill_behavior(req, stage, item_id, idx, initial_correct)
        if behavior == "text" and text is not None:
            return text.format(
                question=item.question if item else "",
                answer=item.answer if item else "",
                item=item_id or "",
                index=idx,
                model=req.model,
                seed=req.seed,
                stage=stage,
            )
        if behavior == "correct" and item is not None:
            return (
                f"Step-by-step reasoning: recalling what I know about {item.id}.\n"
                f"Final Answer: {item.answer}"
            )
        if behavior == "unparseable":
            return "I cannot settle on an answer here."
        return (
            f"Step-by-step reasoning: guessing for {item_id or 'unknown'}.\n"
            f"Final Answer: wrong-{item_id or 'unknown'}-{idx}"
        )

    def _skill_behavior(
        self,
        req: GenerationRequest,
        stage: str,
        item_id: Optional[str],
        idx: int,
        initial_correct: Optional[bool],
    ) -> str:
        for skill in self.script.skills:
            if not fnmatch(req.model, skill.model):
                continue
            if stage == "initial":
                rate = skill.initial_correct_rate
            elif initial_correct:
                rate = skill.correction_keep_rate
            else:
                rate = skill.correction_fix_rate
            draw = hash01(req.seed, idx, req.model, stage, item_id)
            return "correct" if draw < rate else "wrong"
        return "wrong"

    # -- training ---------------------------------------------------------

    def train(self, req: TrainRequest) -> ModelId:
        with self._lock:
            if self._train_fault_budget > 0:
                self._train_fault_budget -= 1
                raise TrainingError("scripted trainer failure")
            self._validate_dataset(req)
            self._train_counter += 1
            counter = self._train_counter
        tag = req.metadata.get("iteration", counter)
        new_id = f"{req.base_model}+ft{tag}"
        self.audit.record(
            {
                "kind": "train",
                "base_model": req.base_model,
                "job_id": f"job-{tag}",
                "new_model_id": new_id,
                "metadata": dict(req.metadata),
            }
        )
        return new_id

    @staticmethod
    def _validate_dataset(req: TrainRequest) -> None:
        if req.dataset_path is not None:
            path = Path(req.dataset_path)
            if not path.exists():
                raise TrainingError(f"dataset file not found: {path}")
            try:
                validate_finetune_rows(path.read_text(encoding="utf-8"))
            except ValueError as exc:
                raise TrainingError(str(exc)) from exc
        elif req.records is not None:
            for i, rec in enumerate(req.records, start=1):
                if "context" not in rec or "target" not in rec:
                    raise TrainingError(f"record {i}: missing context/target field")

    def job_delay_polls(self) -> int:
        return self.script.train_delay_polls
