"""Domain types: QA items, samples, trajectories, and the variant configuration.

A run variant is named by a three-letter code (for example ``EIF``): the first
letter picks the model that samples initial answers, the second the correction
filter, the third the fine-tuning base. ``parse_variant_code`` and
``format_variant_code`` convert between codes and the enum triple.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from .errors import ConfigurationError

ModelId = str


class InitMode(Enum):
    FIXED = "F"
    EVOLVING = "E"


class FilterMode(Enum):
    IMPROVING = "I"
    NON_DECREASING = "N"


class FinetuneMode(Enum):
    FIXED = "F"
    EVOLVING = "E"


_AXES = (
    ("init_mode", {"F": InitMode.FIXED, "E": InitMode.EVOLVING}),
    ("filter_mode", {"I": FilterMode.IMPROVING, "N": FilterMode.NON_DECREASING}),
    ("finetune_mode", {"F": FinetuneMode.FIXED, "E": FinetuneMode.EVOLVING}),
)

# Named presets for the well-known special cases of the design space.
VARIANT_PRESETS = {
    "sc": "FIE",
    "star": "EIF",
}

ALL_VARIANT_CODES = tuple(
    a + b + c for a in "FE" for b in "IN" for c in "FE"
)


def parse_variant_code(code: str) -> tuple[InitMode, FilterMode, FinetuneMode]:
    """Parse a three-letter variant code, case-insensitively.

    Raises ConfigurationError naming the offending character position
    (1-based) on malformed input.
    """
    if not isinstance(code, str) or len(code) != 3:
        raise ConfigurationError(
            f"variant code must be exactly 3 letters, got {code!r}"
        )
    modes = []
    for pos, ((name, mapping), ch) in enumerate(zip(_AXES, code.upper()), start=1):
        if ch not in mapping:
            expected = "/".join(sorted(mapping))
            raise ConfigurationError(
                f"invalid variant code {code!r}: character {pos} must be one of "
                f"{expected} ({name}), got {ch!r}"
            )
        modes.append(mapping[ch])
    return modes[0], modes[1], modes[2]


def format_variant_code(
    init_mode: InitMode, filter_mode: FilterMode, finetune_mode: FinetuneMode
) -> str:
    return init_mode.value + filter_mode.value + finetune_mode.value


def resolve_variant_name(name: str) -> str:
    """Map a preset name ('sc', 'star') or raw code to an uppercase code."""
    key = name.strip().lower()
    if key in VARIANT_PRESETS:
        return VARIANT_PRESETS[key]
    return format_variant_code(*parse_variant_code(name.strip()))


@dataclass(frozen=True)
class QAItem:
    """One dataset row: a question and its gold answer strings."""

    id: str
    question: str
    references: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.id:
            raise ConfigurationError("QAItem.id must be nonempty")
        if not self.question.strip():
            raise ConfigurationError(f"QAItem {self.id!r}: question is empty")
        if not self.references:
            raise ConfigurationError(f"QAItem {self.id!r}: references are empty")


@dataclass(frozen=True)
class AnswerSample:
    """One sampled initial answer for an item."""

    item_id: str
    sample_index: int
    raw_text: str
    parsed_answer: Optional[str]
    producer_model: ModelId
    prompt_sha: str


@dataclass(frozen=True)
class CorrectionSample:
    """One sampled correction of a specific initial answer."""

    item_id: str
    initial_index: int
    correction_index: int
    raw_text: str
    parsed_answer: Optional[str]
    producer_model: ModelId
    prompt_sha: str


@dataclass(frozen=True)
class Trajectory:
    """The unit the filter operates on: (item, initial, correction, rewards).

    Rewards are reals in [0, 1]; an unparseable answer always scores 0.
    """

    item: QAItem
    initial: AnswerSample
    correction: CorrectionSample
    reward_initial: float
    reward_correction: float

    def __post_init__(self) -> None:
        for name in ("reward_initial", "reward_correction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"Trajectory.{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class SamplingParams:
    """Generation parameters sent with every sampling request."""

    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = 512

    def validate(self) -> list[str]:
        out = []
        if self.temperature < 0:
            out.append("sampling.temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            out.append("sampling.top_p must be in (0, 1]")
        if self.max_tokens <= 0:
            out.append("sampling.max_tokens must be > 0")
        return out


@dataclass(frozen=True)
class TrainerHyperparams:
    """Hyperparameters forwarded verbatim to the trainer."""

    epochs: int = 1
    batch_size: int = 8
    learning_rate: float = 7e-6
    weight_decay: float = 0.1
    schedule: str = "cosine"

    def validate(self) -> list[str]:
        out = []
        if self.epochs <= 0:
            out.append("trainer.epochs must be > 0")
        if self.batch_size <= 0:
            out.append("trainer.batch_size must be > 0")
        if self.learning_rate <= 0:
            out.append("trainer.learning_rate must be > 0")
        if self.weight_decay < 0:
            out.append("trainer.weight_decay must be >= 0")
        if not self.schedule:
            out.append("trainer.schedule must be nonempty")
        return out


@dataclass(frozen=True)
class VariantConfig:
    """The three design-axis choices plus loop sizes and request parameters."""

    init_mode: InitMode = InitMode.EVOLVING
    filter_mode: FilterMode = FilterMode.IMPROVING
    finetune_mode: FinetuneMode = FinetuneMode.FIXED
    iterations: int = 1
    n_init: int = 1
    n_corr: int = 1
    threshold: float = 1.0
    sampling: SamplingParams = field(default_factory=SamplingParams)
    trainer: TrainerHyperparams = field(default_factory=TrainerHyperparams)

    @property
    def code(self) -> str:
        return format_variant_code(self.init_mode, self.filter_mode, self.finetune_mode)

    def with_code(self, code: str) -> "VariantConfig":
        init_mode, filter_mode, finetune_mode = parse_variant_code(code)
        return replace(
            self,
            init_mode=init_mode,
            filter_mode=filter_mode,
            finetune_mode=finetune_mode,
        )

    def validate(self) -> list[str]:
        out = []
        if self.iterations < 1:
            out.append("iterations must be >= 1")
        if self.n_init < 1:
            out.append("n_init must be >= 1")
        if self.n_corr < 1:
            out.append("n_corr must be >= 1")
        out.extend(self.sampling.validate())
        out.extend(self.trainer.validate())
        return out
