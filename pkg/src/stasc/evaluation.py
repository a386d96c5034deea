"""Test-split evaluation and run reporting.

Each evaluated iteration samples initial answers and corrections on the test
split with that iteration's generator/corrector, scores them, and keeps the
full per-sample reward matrices so any aggregation can be recomputed later.
The run summary reports the maximum per-iteration accuracy for initial answers
and for corrections, which is the headline number for a run.

Conventions (recorded here because the artifact must pick one): per-item
aggregation over samples is the mean by default (``max`` available), and the
"±" column is the population standard deviation over per-sample rewards within
the iteration.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from statistics import mean, pstdev
from typing import Optional, Sequence

from .backends import GenerationBackend, GenerationRequest
from .core import AnswerSample, QAItem, SamplingParams
from .errors import DatasetError, GenerationError, StascError, TransportError
from .prompts import (
    PromptTemplate,
    parse_final_answer,
    render_correction_prompt,
    render_initial_prompt,
)
from .reward import RewardFn
from .state import RunState
from .store import RunDirectory, atomic_write_text
from .util import derive_seed, parallel_map_ordered, sha_hex

logger = logging.getLogger(__name__)

INITIAL_ACC_LABEL = "max{r(Ŷ¹)}"  # max{r(Ŷ¹)}
CORRECTION_ACC_LABEL = "max{r(Ŷ²)}"  # max{r(Ŷ²)}


@dataclass
class IterationMetrics:
    """Per-iteration test metrics plus the raw per-sample reward matrices."""

    iteration: int
    generator_model: str
    corrector_model: str
    aggregation: str
    initial_acc: float
    initial_std: float
    correction_acc: float
    correction_std: float
    item_ids: list[str]
    initial_rewards: list[list[float]]  # |items| x n_init
    correction_rewards: list[list[list[float]]]  # |items| x n_init x n_corr
    items_failed: int = 0

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "generator_model": self.generator_model,
            "corrector_model": self.corrector_model,
            "aggregation": self.aggregation,
            "initial_acc": self.initial_acc,
            "initial_std": self.initial_std,
            "correction_acc": self.correction_acc,
            "correction_std": self.correction_std,
            "item_ids": self.item_ids,
            "initial_rewards": self.initial_rewards,
            "correction_rewards": self.correction_rewards,
            "items_failed": self.items_failed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IterationMetrics":
        return cls(**data)

    def summary(self) -> dict:
        return {
            "aggregation": self.aggregation,
            "initial_acc": self.initial_acc,
            "initial_std": self.initial_std,
            "correction_acc": self.correction_acc,
            "correction_std": self.correction_std,
        }


def _aggregate(per_item_samples: Sequence[Sequence[float]], aggregation: str) -> tuple[float, float]:
    """(mean over items of per-item aggregate, std over all samples)."""
    if not per_item_samples:
        raise StascError("cannot aggregate an empty reward matrix")
    agg = max if aggregation == "max" else mean
    per_item = [agg(samples) for samples in per_item_samples]
    flat = [r for samples in per_item_samples for r in samples]
    return float(mean(per_item)), float(pstdev(flat)) if len(flat) > 1 else 0.0


def evaluate_iteration(
    generator: str,
    corrector: str,
    test_items: Sequence[QAItem],
    *,
    backend: GenerationBackend,
    initial_template: PromptTemplate,
    correction_template: PromptTemplate,
    reward_fn: RewardFn,
    sampling: SamplingParams,
    n_init: int,
    n_corr: int,
    aggregation: str,
    run_seed: int,
    iteration: int,
    score_full_text: bool = False,
    initial_slot: str = "raw",
    parallelism: int = 4,
    train_ids: Optional[set[str]] = None,
) -> IterationMetrics:
    """Sample and score the test split with an iteration's generator/corrector.

    Rewards never feed back into generation; they are computed after sampling,
    strictly for measurement. Items whose sampling fails after retries are
    dropped from the matrices and counted in ``items_failed``.
    """
    if not test_items:
        raise DatasetError("test split is empty")
    if train_ids is not None:
        overlap = train_ids & {i.id for i in test_items}
        if overlap:
            raise DatasetError(
                f"test split overlaps train split on ids: {', '.join(sorted(overlap)[:5])}"
            )

    def score(raw: str, item: QAItem, marker: str) -> float:
        parsed = parse_final_answer(raw, marker)
        scored_text = raw if score_full_text else parsed
        return reward_fn(scored_text, item.references)

    def eval_item(item: QAItem):
        prompt = render_initial_prompt(initial_template, item)
        req = GenerationRequest(
            model=generator,
            prompt=prompt,
            num_samples=n_init,
            temperature=sampling.temperature,
            top_p=sampling.top_p,
            max_tokens=sampling.max_tokens,
            seed=derive_seed(run_seed, "eval", iteration, "initial", item.id),
            metadata={"stage": "eval_initial", "iteration": iteration, "item_id": item.id},
        )
        try:
            initial_texts = backend.generate(req)
        except (GenerationError, TransportError) as exc:
            logger.warning("eval: initial sampling failed for %s: %s", item.id, exc)
            return None
        initial_row = [score(t, item, initial_template.marker) for t in initial_texts]
        correction_rows = []
        for j, raw in enumerate(initial_texts):
            sample = AnswerSample(
                item_id=item.id,
                sample_index=j,
                raw_text=raw,
                parsed_answer=parse_final_answer(raw, initial_template.marker),
                producer_model=generator,
                prompt_sha=sha_hex(prompt),
            )
            cprompt = render_correction_prompt(
                correction_template, item, sample, initial_slot=initial_slot
            )
            creq = GenerationRequest(
                model=corrector,
                prompt=cprompt,
                num_samples=n_corr,
                temperature=sampling.temperature,
                top_p=sampling.top_p,
                max_tokens=sampling.max_tokens,
                seed=derive_seed(run_seed, "eval", iteration, "correction", item.id, j),
                metadata={
                    "stage": "eval_correction",
                    "iteration": iteration,
                    "item_id": item.id,
                },
            )
            try:
                correction_texts = backend.generate(creq)
            except (GenerationError, TransportError) as exc:
                logger.warning("eval: correction sampling failed for %s: %s", item.id, exc)
                return None
            correction_rows.append(
                [score(t, item, correction_template.marker) for t in correction_texts]
            )
        return initial_row, correction_rows

    results = parallel_map_ordered(eval_item, list(test_items), parallelism)
    item_ids = []
    initial_rewards = []
    correction_rewards = []
    failed = 0
    for item, result in zip(test_items, results):
        if result is None:
            failed += 1
            continue
        item_ids.append(item.id)
        initial_rewards.append(result[0])
        correction_rewards.append(result[1])
    if not item_ids:
        raise GenerationError("evaluation failed for every test item")

    initial_acc, initial_std = _aggregate(initial_rewards, aggregation)
    correction_acc, correction_std = _aggregate(
        [[r for row in rows for r in row] for rows in correction_rewards], aggregation
    )
    return IterationMetrics(
        iteration=iteration,
        generator_model=generator,
        corrector_model=corrector,
        aggregation=aggregation,
        initial_acc=initial_acc,
        initial_std=initial_std,
        correction_acc=correction_acc,
        correction_std=correction_std,
        item_ids=item_ids,
        initial_rewards=initial_rewards,
        correction_rewards=correction_rewards,
        items_failed=failed,
    )


# -- run summary and report ---------------------------------------------------


@dataclass(frozen=True)
class RunSummary:
    max_initial_acc: float
    best_initial_iteration: int
    max_correction_acc: float
    best_correction_iteration: int
    curve: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "max_initial_acc": self.max_initial_acc,
            "best_initial_iteration": self.best_initial_iteration,
            "max_correction_acc": self.max_correction_acc,
            "best_correction_iteration": self.best_correction_iteration,
            "curve": list(self.curve),
        }


def summarize_run(metrics: Sequence[IterationMetrics | dict]) -> RunSummary:
    """Maximum accuracy over iterations plus the full per-iteration curve."""
    if not metrics:
        raise StascError("summarize_run needs at least one evaluated iteration")
    rows = [m.to_dict() if isinstance(m, IterationMetrics) else dict(m) for m in metrics]
    rows.sort(key=lambda r: r["iteration"])
    best_init = max(rows, key=lambda r: r["initial_acc"])
    best_corr = max(rows, key=lambda r: r["correction_acc"])
    curve = tuple(
        {
            "iteration": r["iteration"],
            "initial_acc": r["initial_acc"],
            "initial_std": r["initial_std"],
            "correction_acc": r["correction_acc"],
            "correction_std": r["correction_std"],
        }
        for r in rows
    )
    return RunSummary(
        max_initial_acc=best_init["initial_acc"],
        best_initial_iteration=best_init["iteration"],
        max_correction_acc=best_corr["correction_acc"],
        best_correction_iteration=best_corr["iteration"],
        curve=curve,
    )


def curves_csv(summary: RunSummary) -> str:
    lines = ["iteration,initial_acc,initial_std,correction_acc,correction_std"]
    for point in summary.curve:
        lines.append(
            f"{point['iteration']},{point['initial_acc']:.6f},{point['initial_std']:.6f},"
            f"{point['correction_acc']:.6f},{point['correction_std']:.6f}"
        )
    return "\n".join(lines) + "\n"


def render_report_text(state: RunState, summary: Optional[RunSummary]) -> str:
    cfg = state.config
    lines = [
        f"run {state.run_id}  STaSC_{cfg['variant']}  "
        f"N={cfg['iterations']} N_init={cfg['n_init']} N_corr={cfg['n_corr']} "
        f"base={state.base_model} seed={state.seed} status={state.status}",
        "",
        "iterations:",
        f"{'n':>3}  {'generator':<18} {'corrector':<18} {'produced':<18} "
        f"{'selected':>8} {'trained':>7}",
    ]
    for rec in state.iterations:
        lines.append(
            f"{rec.n:>3}  {rec.generator:<18} {rec.corrector:<18} "
            f"{(rec.produced_model or '-'):<18} "
            f"{rec.counts.get('selected', 0):>8} {str(rec.trained):>7}"
        )
    if summary is not None:
        lines += [
            "",
            f"{'iter':>4}  {'r(Ŷ¹)':<16} {'r(Ŷ²)':<16}",
        ]
        for point in summary.curve:
            lines.append(
                f"{point['iteration']:>4}  "
                f"{point['initial_acc']:.3f} ± {point['initial_std']:.3f}    "
                f"{point['correction_acc']:.3f} ± {point['correction_std']:.3f}"
            )
        lines += [
            "",
            f"{INITIAL_ACC_LABEL:<14} {CORRECTION_ACC_LABEL:<14}",
            f"{summary.max_initial_acc:<14.3f} {summary.max_correction_acc:<14.3f}",
            f"(best iterations: initial n={summary.best_initial_iteration}, "
            f"correction n={summary.best_correction_iteration})",
        ]
    else:
        lines += ["", "no evaluation metrics recorded (eval disabled)"]
    return "\n".join(lines) + "\n"


def load_run_metrics(rd: RunDirectory, state: RunState) -> list[dict]:
    out = []
    for rec in state.iterations:
        payload = rd.read_eval(rec.n)
        if payload is not None:
            out.append(payload)
    return out


def write_report(rd: RunDirectory, state: RunState) -> Optional[RunSummary]:
    """Render report.txt / report.json / curves.csv from committed artifacts."""
    metrics = load_run_metrics(rd, state)
    summary = summarize_run(metrics) if metrics else None
    atomic_write_text(rd.report_text_path, render_report_text(state, summary))
    report = {
        "run_id": state.run_id,
        "variant": state.config["variant"],
        "status": state.status,
        "iterations": [
            {
                "n": rec.n,
                "generator": rec.generator,
                "corrector": rec.corrector,
                "finetune_base": rec.finetune_base,
                "produced_model": rec.produced_model,
                "trained": rec.trained,
                "counts": rec.counts,
                "metrics": rec.metrics,
            }
            for rec in state.iterations
        ],
        "summary": summary.to_dict() if summary else None,
    }
    atomic_write_text(
        rd.report_json_path,
        json.dumps(report, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
    )
    if summary is not None:
        atomic_write_text(rd.curves_path, curves_csv(summary))
    return summary
