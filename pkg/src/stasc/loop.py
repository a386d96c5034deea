"""The iteration driver: sample, correct, filter, build dataset, train, evaluate.

Each iteration runs its steps in order and commits every step's artifacts
(whole files, atomically) before marking the step done in the state file.
Resume replays any step that was not marked done; because sampling seeds
derive from the run seed and results are committed in deterministic item
order, a resumed run reproduces the uninterrupted run byte for byte under the
scripted mock.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from .backends import (
    GenerationBackend,
    GenerationRequest,
    HttpGenerationBackend,
    HttpTrainerBackend,
    SubprocessTrainerBackend,
    TrainerBackend,
    TrainRequest,
)
from .config import RunConfig
from .core import (
    AnswerSample,
    CorrectionSample,
    FilterMode,
    InitMode,
    QAItem,
    Trajectory,
)
from .datasets import check_disjoint_splits, load_qa_items
from .errors import (
    ConfigurationError,
    EmptyFilterHalt,
    GenerationError,
    StateIntegrityError,
    TrainingError,
    TransportError,
)
from .evaluation import evaluate_iteration, write_report
from .mock import MockBackend, MockScript
from .prompts import (
    PromptTemplate,
    default_template,
    load_template,
    parse_final_answer,
    render_correction_prompt,
    render_initial_prompt,
)
from .reward import make_reward
from .selection import (
    FilterOutcome,
    build_finetune_dataset,
    filter_improving,
    filter_non_decreasing,
    load_finetune_records,
    serialize_finetune_records,
)
from .state import (
    STEP_CORRECTIONS,
    STEP_EVAL,
    STEP_FILTER,
    STEP_INITIAL,
    STEP_TRAIN,
    IterationRecord,
    RunState,
    resolve_models,
)
from .store import (
    INITIALS_FILE,
    PROMPTS_CORRECTION_FILE,
    PROMPTS_INITIAL_FILE,
    TRAJECTORIES_FILE,
    RunDirectory,
    initial_row,
    row_to_initial,
    row_to_trajectory,
    trajectory_row,
)
from .util import derive_seed, parallel_map_ordered, sha_hex

logger = logging.getLogger(__name__)

MOCK_SCHEME = "mock://"
SUBPROCESS_SCHEME = "subprocess://"


@dataclass(frozen=True)
class IterationPlan:
    """Resolved model roles and the items an iteration will process."""

    n: int
    generator: str
    corrector: str
    finetune_base: str
    items: tuple[QAItem, ...]


def build_backends(cfg: RunConfig) -> tuple[GenerationBackend, TrainerBackend]:
    """Construct backends from endpoint URLs.

    ``mock://path.yaml`` loads the scripted mock in process; when both
    endpoints name the same script, one shared instance serves generation and
    training so fine-tuned ids resolve consistently. ``subprocess://cmd`` wraps
    a local trainer command. Anything else is treated as an HTTP base URL.
    """
    b = cfg.backends
    gen: GenerationBackend
    trainer: TrainerBackend
    if b.gen_endpoint.startswith(MOCK_SCHEME):
        script = MockScript.from_file(b.gen_endpoint[len(MOCK_SCHEME):])
        gen = MockBackend(script)
    else:
        gen = HttpGenerationBackend(
            b.gen_endpoint,
            token=b.token(),
            max_retries=b.max_retries,
            retry_base_delay=b.retry_base_delay,
            timeout=b.request_timeout,
        )
    if b.train_endpoint.startswith(MOCK_SCHEME):
        if b.train_endpoint == b.gen_endpoint and isinstance(gen, MockBackend):
            trainer = gen
        else:
            trainer = MockBackend(MockScript.from_file(b.train_endpoint[len(MOCK_SCHEME):]))
    elif b.train_endpoint.startswith(SUBPROCESS_SCHEME):
        trainer = SubprocessTrainerBackend(
            b.train_endpoint[len(SUBPROCESS_SCHEME):], timeout=b.poll_timeout
        )
    else:
        trainer = HttpTrainerBackend(
            b.train_endpoint,
            token=b.token(),
            poll_interval=b.poll_interval,
            poll_timeout=b.poll_timeout,
            max_retries=b.max_retries,
            retry_base_delay=b.retry_base_delay,
            timeout=b.request_timeout,
        )
    return gen, trainer


def _load_templates(cfg: RunConfig) -> tuple[PromptTemplate, PromptTemplate]:
    initial = (
        default_template("initial")
        if cfg.prompts.initial == "default"
        else load_template(cfg.prompts.initial)
    )
    correction = (
        default_template("correction")
        if cfg.prompts.correction == "default"
        else load_template(cfg.prompts.correction)
    )
    return initial, correction


class Runner:
    """Owns one run: its state, backends, templates, and datasets."""

    def __init__(
        self,
        cfg: RunConfig,
        gen_backend: Optional[GenerationBackend] = None,
        trainer_backend: Optional[TrainerBackend] = None,
    ) -> None:
        violations = cfg.validate()
        if violations:
            raise ConfigurationError("; ".join(violations))
        self.cfg = cfg
        if gen_backend is None or trainer_backend is None:
            built_gen, built_trainer = build_backends(cfg)
            gen_backend = gen_backend or built_gen
            trainer_backend = trainer_backend or built_trainer
        self.gen = gen_backend
        self.trainer = trainer_backend
        self.rd = RunDirectory(cfg.run_dir)
        self.initial_template, self.correction_template = _load_templates(cfg)
        self.reward_fn = make_reward(cfg.reward.name, cfg.reward.params)
        self.items = load_qa_items(cfg.train_dataset)
        self.test_items: list[QAItem] = []
        if cfg.eval.enabled:
            self.test_items = load_qa_items(cfg.test_dataset)
            check_disjoint_splits(self.items, self.test_items)
        self._items_by_id = {i.id: i for i in self.items}

    # -- lifecycle ----------------------------------------------------------

    def preflight(self) -> None:
        self.gen.ping()
        self.trainer.ping()

    def start(self) -> RunState:
        if self.rd.exists():
            raise ConfigurationError(
                f"run directory {self.rd.root} already contains a state file; "
                "use resume instead"
            )
        self.preflight()
        self.rd.initialize(self.cfg.to_yaml())
        state = RunState(
            run_id=self.cfg.effective_run_id,
            seed=self.cfg.seed,
            base_model=self.cfg.base_model,
            config=self.cfg.to_dict(),
        )
        self._persist(state)
        return state

    def resume_state(self) -> RunState:
        state = self.rd.load_state()
        self.preflight()
        self.rd.sweep_tmp_files()
        if state.status == "failed":
            logger.info("resuming failed run %s (error: %s)", state.run_id, state.error)
            state.error = None
        return state

    def run(self, *, resume: bool = False) -> RunState:
        state = self.resume_state() if resume else self.start()
        if state.status == "done":
            logger.info("run %s already complete", state.run_id)
            return state
        for n in range(1, self.cfg.variant.iterations + 1):
            self.run_iteration(state, n)
        write_report(self.rd, state)
        state.status = "done"
        self._persist(state)
        return state

    def _persist(self, state: RunState) -> None:
        self.rd.save_state(state)

    # -- iteration ----------------------------------------------------------

    def _required_steps(self) -> list[str]:
        steps = [STEP_INITIAL, STEP_CORRECTIONS, STEP_FILTER, STEP_TRAIN]
        if self.cfg.eval.enabled:
            steps.append(STEP_EVAL)
        return steps

    def plan_iteration(self, state: RunState, n: int) -> IterationPlan:
        generator, corrector, finetune_base = resolve_models(state, n)
        return IterationPlan(
            n=n,
            generator=generator,
            corrector=corrector,
            finetune_base=finetune_base,
            items=tuple(self.items),
        )

    def run_iteration(self, state: RunState, n: int) -> RunState:
        if state.status == "done":
            raise StateIntegrityError("run is already done")
        rec = state.record_for(n)
        if rec is None:
            plan = self.plan_iteration(state, n)
            rec = IterationRecord(
                n=n,
                generator=plan.generator,
                corrector=plan.corrector,
                finetune_base=plan.finetune_base,
            )
            state.add_record(rec)
        else:
            plan = IterationPlan(
                n=n,
                generator=rec.generator,
                corrector=rec.corrector,
                finetune_base=rec.finetune_base,
                items=tuple(self.items),
            )
        if all(rec.step_done(s) for s in self._required_steps()):
            return state

        initials = self._step_initial(state, rec, plan)
        trajectories = self._step_corrections(state, rec, plan, initials)
        records_bytes, n_selected = self._step_filter(state, rec, plan, trajectories)
        self._step_train(state, rec, plan, n_selected)
        if self.cfg.eval.enabled:
            self._step_eval(state, rec)
        return state

    # -- step 1: initial answers --------------------------------------------

    def _score(self, raw: str, item: QAItem, marker: str) -> tuple[Optional[str], float]:
        parsed = parse_final_answer(raw, marker)
        scored = raw if self.cfg.reward.score_full_text else parsed
        return parsed, self.reward_fn(scored, item.references)

    def sample_initial_answers(
        self, plan: IterationPlan
    ) -> tuple[list[tuple[AnswerSample, float]], dict[str, str], list[str]]:
        """Sample n_init answers per item; returns (samples, prompt store, failed ids)."""
        v = self.cfg.variant

        def task(item: QAItem):
            prompt = render_initial_prompt(self.initial_template, item)
            req = GenerationRequest(
                model=plan.generator,
                prompt=prompt,
                num_samples=v.n_init,
                temperature=v.sampling.temperature,
                top_p=v.sampling.top_p,
                max_tokens=v.sampling.max_tokens,
                seed=derive_seed(self.cfg.seed, plan.n, "initial", item.id),
                metadata={"stage": "initial", "iteration": plan.n, "item_id": item.id},
            )
            try:
                texts = self.gen.generate(req)
            except (GenerationError, TransportError) as exc:
                logger.warning("iteration %d: item %s failed: %s", plan.n, item.id, exc)
                return prompt, None
            return prompt, texts

        results = parallel_map_ordered(
            task, list(plan.items), self.cfg.backends.request_parallelism
        )
        samples: list[tuple[AnswerSample, float]] = []
        prompts: dict[str, str] = {}
        failed: list[str] = []
        for item, (prompt, texts) in zip(plan.items, results):
            if texts is None:
                failed.append(item.id)
                continue
            sha = sha_hex(prompt)
            prompts[sha] = prompt
            for j, raw in enumerate(texts):
                parsed, reward = self._score(raw, item, self.initial_template.marker)
                sample = AnswerSample(
                    item_id=item.id,
                    sample_index=j,
                    raw_text=raw,
                    parsed_answer=parsed,
                    producer_model=plan.generator,
                    prompt_sha=sha,
                )
                samples.append((sample, reward))
        return samples, prompts, failed

    def _step_initial(
        self, state: RunState, rec: IterationRecord, plan: IterationPlan
    ) -> list[tuple[AnswerSample, float]]:
        if rec.step_done(STEP_INITIAL):
            rows = self.rd.read_rows(rec.n, INITIALS_FILE)
            return [row_to_initial(r) for r in rows]
        state.status = "sampling_initial"
        self._persist(state)
        samples, prompts, failed = self.sample_initial_answers(plan)
        rows = [
            initial_row(seq, rec.n, sample, reward)
            for seq, (sample, reward) in enumerate(samples, start=1)
        ]
        self.rd.commit_rows(rec.n, INITIALS_FILE, rows)
        self.rd.commit_prompts(rec.n, PROMPTS_INITIAL_FILE, prompts)
        rec.counts["items"] = len(plan.items)
        rec.counts["items_failed_initial"] = len(failed)
        rec.counts["initials"] = len(samples)
        rec.mark_step(STEP_INITIAL)
        self._persist(state)
        return samples

    # -- step 2: corrections --------------------------------------------------

    def sample_corrections(
        self,
        initials: Sequence[tuple[AnswerSample, float]],
        plan: IterationPlan,
    ) -> tuple[list[Trajectory], dict[str, str], int]:
        """Sample n_corr corrections per initial answer from the corrector model."""
        v = self.cfg.variant

        def task(entry: tuple[AnswerSample, float]):
            sample, reward_initial = entry
            item = self._items_by_id[sample.item_id]
            prompt = render_correction_prompt(
                self.correction_template,
                item,
                sample,
                initial_slot=self.cfg.prompts.initial_slot,
            )
            req = GenerationRequest(
                model=plan.corrector,
                prompt=prompt,
                num_samples=v.n_corr,
                temperature=v.sampling.temperature,
                top_p=v.sampling.top_p,
                max_tokens=v.sampling.max_tokens,
                seed=derive_seed(
                    self.cfg.seed, plan.n, "correction", item.id, sample.sample_index
                ),
                metadata={
                    "stage": "correction",
                    "iteration": plan.n,
                    "item_id": item.id,
                    "initial_index": sample.sample_index,
                },
            )
            try:
                texts = self.gen.generate(req)
            except (GenerationError, TransportError) as exc:
                logger.warning(
                    "iteration %d: corrections for (%s, %d) failed: %s",
                    plan.n,
                    item.id,
                    sample.sample_index,
                    exc,
                )
                return prompt, None
            return prompt, texts

        results = parallel_map_ordered(
            task, list(initials), self.cfg.backends.request_parallelism
        )
        trajectories: list[Trajectory] = []
        prompts: dict[str, str] = {}
        failed_pairs = 0
        for (sample, reward_initial), (prompt, texts) in zip(initials, results):
            if texts is None:
                failed_pairs += 1
                continue
            item = self._items_by_id[sample.item_id]
            sha = sha_hex(prompt)
            prompts[sha] = prompt
            for k, raw in enumerate(texts):
                parsed, reward_correction = self._score(
                    raw, item, self.correction_template.marker
                )
                correction = CorrectionSample(
                    item_id=item.id,
                    initial_index=sample.sample_index,
                    correction_index=k,
                    raw_text=raw,
                    parsed_answer=parsed,
                    producer_model=plan.corrector,
                    prompt_sha=sha,
                )
                trajectories.append(
                    Trajectory(
                        item=item,
                        initial=sample,
                        correction=correction,
                        reward_initial=reward_initial,
                        reward_correction=reward_correction,
                    )
                )
        return trajectories, prompts, failed_pairs

    def _step_corrections(
        self,
        state: RunState,
        rec: IterationRecord,
        plan: IterationPlan,
        initials: list[tuple[AnswerSample, float]],
    ) -> list[Trajectory]:
        if rec.step_done(STEP_CORRECTIONS):
            rows = self.rd.read_rows(rec.n, TRAJECTORIES_FILE)
            return [row_to_trajectory(r, self._items_by_id) for r in rows]
        state.status = "sampling_corrections"
        self._persist(state)
        trajectories, prompts, failed_pairs = self.sample_corrections(initials, plan)
        seq0 = rec.counts.get("initials", 0)
        rows = [
            trajectory_row(seq0 + i, rec.n, traj)
            for i, traj in enumerate(trajectories, start=1)
        ]
        self.rd.commit_rows(rec.n, TRAJECTORIES_FILE, rows)
        self.rd.commit_prompts(rec.n, PROMPTS_CORRECTION_FILE, prompts)
        rec.counts["corrections_failed_pairs"] = failed_pairs
        rec.counts["trajectories"] = len(trajectories)
        rec.mark_step(STEP_CORRECTIONS)
        self._persist(state)
        return trajectories

    # -- step 3: filter + dataset ---------------------------------------------

    def apply_filter(self, trajectories: Sequence[Trajectory]) -> FilterOutcome:
        if self.cfg.variant.filter_mode is FilterMode.IMPROVING:
            return filter_improving(trajectories)
        return filter_non_decreasing(trajectories, self.cfg.variant.threshold)

    def _step_filter(
        self,
        state: RunState,
        rec: IterationRecord,
        plan: IterationPlan,
        trajectories: list[Trajectory],
    ) -> tuple[bytes, int]:
        if rec.step_done(STEP_FILTER):
            data = self.rd.dataset_path(rec.n).read_bytes()
            return data, rec.counts.get("selected", 0)
        state.status = "filtering"
        self._persist(state)
        outcome = self.apply_filter(trajectories)
        prompt_store = self.rd.read_prompts(rec.n, PROMPTS_CORRECTION_FILE)
        records = build_finetune_dataset(
            outcome,
            prompt_store,
            max_per_item=self.cfg.selection.max_per_item,
            dedupe=self.cfg.selection.dedupe,
        )
        data = serialize_finetune_records(records)
        self.rd.commit_dataset(rec.n, data)
        rec.counts["improving"] = len(outcome.improving)
        rec.counts["equal_kept"] = len(outcome.equal_kept)
        rec.counts["selected"] = len(outcome.selected)
        rec.counts["dataset_records"] = len(records)
        rec.mark_step(STEP_FILTER)
        self._persist(state)
        return data, len(outcome.selected)

    # -- step 4: training --------------------------------------------------------

    def _step_train(
        self, state: RunState, rec: IterationRecord, plan: IterationPlan, n_selected: int
    ) -> None:
        if rec.step_done(STEP_TRAIN):
            return
        if rec.counts.get("dataset_records", 0) == 0:
            if self.cfg.empty_filter_policy == "halt":
                state.status = "failed"
                state.error = (
                    f"iteration {rec.n}: filter produced no trajectories (policy=halt)"
                )
                self._persist(state)
                raise EmptyFilterHalt(state.error)
            logger.warning(
                "iteration %d: filter produced no trajectories; keeping %s unchanged",
                rec.n,
                plan.finetune_base,
            )
            rec.warnings.append("empty_filter_skipped_training")
            rec.produced_model = plan.finetune_base
            rec.trained = False
            rec.mark_step(STEP_TRAIN)
            self._persist(state)
            return
        state.status = "training"
        self._persist(state)
        dataset_path = self.rd.dataset_path(rec.n)
        req = TrainRequest(
            base_model=plan.finetune_base,
            dataset_path=str(dataset_path),
            records=tuple(load_finetune_records(dataset_path)),
            hyperparams=self.cfg.variant.trainer,
            metadata={"iteration": rec.n, "run_id": state.run_id},
        )
        try:
            new_id = self.trainer.train(req)
        except TrainingError as exc:
            state.status = "failed"
            state.error = f"iteration {rec.n}: training failed: {exc}"
            self._persist(state)
            raise
        if new_id in state.known_model_ids():
            raise StateIntegrityError(
                f"trainer returned a non-fresh model id {new_id!r}"
            )
        rec.produced_model = new_id
        rec.trained = True
        audit = getattr(self.trainer, "audit", None)
        if audit is not None:
            calls = audit.train_calls()
            if calls:
                rec.train_job_id = calls[-1].get("job_id")
        rec.mark_step(STEP_TRAIN)
        self._persist(state)

    # -- step 5: evaluation ---------------------------------------------------

    def _step_eval(self, state: RunState, rec: IterationRecord) -> None:
        if rec.step_done(STEP_EVAL):
            return
        state.status = "evaluating"
        self._persist(state)
        init_mode, _, _ = state.axes()
        produced = state.model_after(rec.n)
        generator = state.base_model if init_mode is InitMode.FIXED else produced
        v = self.cfg.variant
        metrics = evaluate_iteration(
            generator,
            produced,
            self.test_items,
            backend=self.gen,
            initial_template=self.initial_template,
            correction_template=self.correction_template,
            reward_fn=self.reward_fn,
            sampling=v.sampling,
            n_init=self.cfg.eval.n_init or v.n_init,
            n_corr=self.cfg.eval.n_corr or v.n_corr,
            aggregation=self.cfg.eval.aggregation,
            run_seed=self.cfg.seed,
            iteration=rec.n,
            score_full_text=self.cfg.reward.score_full_text,
            initial_slot=self.cfg.prompts.initial_slot,
            parallelism=self.cfg.backends.request_parallelism,
            train_ids={i.id for i in self.items},
        )
        self.rd.commit_eval(rec.n, metrics.to_dict())
        rec.metrics = metrics.summary()
        rec.mark_step(STEP_EVAL)
        self._persist(state)


def run(
    cfg: RunConfig,
    gen_backend: Optional[GenerationBackend] = None,
    trainer_backend: Optional[TrainerBackend] = None,
    *,
    resume: bool = False,
) -> RunState:
    """Build a Runner and execute the configured number of iterations."""
    return Runner(cfg, gen_backend, trainer_backend).run(resume=resume)
