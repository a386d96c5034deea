"""Iterative self-correction training orchestration.

Samples initial answers and corrections from model endpoints, filters
corrections by reward, builds correction-only fine-tuning datasets, and
dispatches training jobs, over every combination of the three design axes
(initialization, filter, fine-tuning base).
"""

from .config import RunConfig
from .core import (
    AnswerSample,
    CorrectionSample,
    FilterMode,
    FinetuneMode,
    InitMode,
    QAItem,
    SamplingParams,
    Trajectory,
    TrainerHyperparams,
    VariantConfig,
    format_variant_code,
    parse_variant_code,
)
from .loop import Runner, run
from .reward import in_accuracy, make_reward, normalize_answer
from .selection import (
    FilterOutcome,
    FinetuneRecord,
    build_finetune_dataset,
    filter_improving,
    filter_non_decreasing,
)
from .state import IterationRecord, RunState, resolve_models

__version__ = "0.1.0"

__all__ = [
    "AnswerSample",
    "CorrectionSample",
    "FilterMode",
    "FilterOutcome",
    "FinetuneMode",
    "FinetuneRecord",
    "InitMode",
    "IterationRecord",
    "QAItem",
    "RunConfig",
    "Runner",
    "RunState",
    "SamplingParams",
    "Trajectory",
    "TrainerHyperparams",
    "VariantConfig",
    "build_finetune_dataset",
    "filter_improving",
    "filter_non_decreasing",
    "format_variant_code",
    "in_accuracy",
    "make_reward",
    "normalize_answer",
    "parse_variant_code",
    "resolve_models",
    "run",
]
