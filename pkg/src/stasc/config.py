"""Run configuration: file schema, validation, and flag overrides.

The run config is a human-editable YAML file. Flags override file values,
which override defaults. ``RunConfig.to_dict()`` materializes every default,
and that normalized dict is what gets snapshotted into the run directory and
embedded in the state file, so resumed runs never depend on the original file.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .core import (
    SamplingParams,
    TrainerHyperparams,
    VariantConfig,
    parse_variant_code,
    resolve_variant_name,
)
from .errors import ConfigurationError

GEN_ENDPOINT_ENV = "STASC_GEN_ENDPOINT"
TRAIN_ENDPOINT_ENV = "STASC_TRAIN_ENDPOINT"
DEFAULT_TOKEN_ENV = "STASC_AUTH_TOKEN"

EMPTY_FILTER_POLICIES = ("skip", "halt")
AGGREGATIONS = ("mean", "max")
INITIAL_SLOTS = ("raw", "final")

_TOP_KEYS = {
    "run_id",
    "seed",
    "variant",
    "iterations",
    "n_init",
    "n_corr",
    "threshold",
    "base_model",
    "run_dir",
    "dataset",
    "backends",
    "sampling",
    "trainer",
    "reward",
    "prompts",
    "selection",
    "policy",
    "eval",
}


@dataclass(frozen=True)
class BackendsConfig:
    gen_endpoint: str = ""
    train_endpoint: str = ""
    auth_token_env: str = DEFAULT_TOKEN_ENV
    request_parallelism: int = 4
    max_retries: int = 3
    retry_base_delay: float = 0.5
    request_timeout: float = 120.0
    poll_interval: float = 1.0
    poll_timeout: float = 3600.0

    def token(self) -> Optional[str]:
        return os.environ.get(self.auth_token_env) or None


@dataclass(frozen=True)
class RewardConfig:
    name: str = "in_accuracy"
    params: dict = field(default_factory=dict)
    # Score the full generation rather than the parsed final answer.
    score_full_text: bool = False


@dataclass(frozen=True)
class PromptsConfig:
    initial: str = "default"  # "default" or a template file path
    correction: str = "default"
    initial_slot: str = "raw"  # what fills the correction prompt's answer slot


@dataclass(frozen=True)
class SelectionConfig:
    max_per_item: Optional[int] = None
    dedupe: bool = False


@dataclass(frozen=True)
class EvalConfig:
    enabled: bool = True
    aggregation: str = "mean"
    n_init: Optional[int] = None  # None mirrors the training values
    n_corr: Optional[int] = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    variant: VariantConfig = field(default_factory=VariantConfig)
    base_model: str = ""
    run_dir: str = ""
    train_dataset: str = ""
    test_dataset: Optional[str] = None
    run_id: Optional[str] = None
    backends: BackendsConfig = field(default_factory=BackendsConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    prompts: PromptsConfig = field(default_factory=PromptsConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    empty_filter_policy: str = "skip"

    @property
    def effective_run_id(self) -> str:
        return self.run_id or f"{self.variant.code}-s{self.seed}"

    def describe(self) -> str:
        v = self.variant
        return (
            f"STaSC_{v.code}, N={v.iterations}, N_init={v.n_init}, N_corr={v.n_corr}, "
            f"t={v.threshold}, base_model={self.base_model or '<unset>'}, seed={self.seed}"
        )

    # -- validation ----------------------------------------------------------

    def validate(self) -> list[str]:
        out = []
        try:
            parse_variant_code(self.variant.code)
        except ConfigurationError as exc:
            out.append(str(exc))
        out.extend(self.variant.validate())
        if not self.base_model:
            out.append("base_model must be set")
        if not self.run_dir:
            out.append("run_dir must be set")
        if not self.train_dataset:
            out.append("dataset.train must be set")
        if self.eval.enabled and not self.test_dataset:
            out.append("dataset.test must be set when eval.enabled is true")
        if not self.backends.gen_endpoint:
            out.append(f"backends.gen_endpoint must be set (or {GEN_ENDPOINT_ENV})")
        if not self.backends.train_endpoint:
            out.append(f"backends.train_endpoint must be set (or {TRAIN_ENDPOINT_ENV})")
        if self.backends.request_parallelism < 1:
            out.append("backends.request_parallelism must be >= 1")
        if self.backends.max_retries < 0:
            out.append("backends.max_retries must be >= 0")
        if self.empty_filter_policy not in EMPTY_FILTER_POLICIES:
            out.append(
                f"policy.empty_filter must be one of {'/'.join(EMPTY_FILTER_POLICIES)}, "
                f"got {self.empty_filter_policy!r}"
            )
        if self.eval.aggregation not in AGGREGATIONS:
            out.append(
                f"eval.aggregation must be one of {'/'.join(AGGREGATIONS)}, "
                f"got {self.eval.aggregation!r}"
            )
        if self.prompts.initial_slot not in INITIAL_SLOTS:
            out.append(
                f"prompts.initial_slot must be one of {'/'.join(INITIAL_SLOTS)}, "
                f"got {self.prompts.initial_slot!r}"
            )
        if self.selection.max_per_item is not None and self.selection.max_per_item < 1:
            out.append("selection.max_per_item must be >= 1 when set")
        for which in ("n_init", "n_corr"):
            v = getattr(self.eval, which)
            if v is not None and v < 1:
                out.append(f"eval.{which} must be >= 1 when set")
        return out

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        v = self.variant
        return {
            "run_id": self.effective_run_id,
            "seed": self.seed,
            "variant": v.code,
            "iterations": v.iterations,
            "n_init": v.n_init,
            "n_corr": v.n_corr,
            "threshold": v.threshold,
            "base_model": self.base_model,
            "run_dir": self.run_dir,
            "dataset": {"train": self.train_dataset, "test": self.test_dataset},
            "backends": {
                "gen_endpoint": self.backends.gen_endpoint,
                "train_endpoint": self.backends.train_endpoint,
                "auth_token_env": self.backends.auth_token_env,
                "request_parallelism": self.backends.request_parallelism,
                "max_retries": self.backends.max_retries,
                "retry_base_delay": self.backends.retry_base_delay,
                "request_timeout": self.backends.request_timeout,
                "poll_interval": self.backends.poll_interval,
                "poll_timeout": self.backends.poll_timeout,
            },
            "sampling": {
                "temperature": v.sampling.temperature,
                "top_p": v.sampling.top_p,
                "max_tokens": v.sampling.max_tokens,
            },
            "trainer": {
                "epochs": v.trainer.epochs,
                "batch_size": v.trainer.batch_size,
                "learning_rate": v.trainer.learning_rate,
                "weight_decay": v.trainer.weight_decay,
                "schedule": v.trainer.schedule,
            },
            "reward": {
                "name": self.reward.name,
                "params": dict(self.reward.params),
                "score_full_text": self.reward.score_full_text,
            },
            "prompts": {
                "initial": self.prompts.initial,
                "correction": self.prompts.correction,
                "initial_slot": self.prompts.initial_slot,
            },
            "selection": {
                "max_per_item": self.selection.max_per_item,
                "dedupe": self.selection.dedupe,
            },
            "policy": {"empty_filter": self.empty_filter_policy},
            "eval": {
                "enabled": self.eval.enabled,
                "aggregation": self.eval.aggregation,
                "n_init": self.eval.n_init,
                "n_corr": self.eval.n_corr,
            },
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        unknown = set(data) - _TOP_KEYS
        if unknown:
            raise ConfigurationError(
                f"unknown config keys: {', '.join(sorted(unknown))}"
            )

        def section(name: str) -> dict:
            value = data.get(name) or {}
            if not isinstance(value, dict):
                raise ConfigurationError(f"config section {name!r} must be a mapping")
            return value

        sampling_d = section("sampling")
        trainer_d = section("trainer")
        variant = VariantConfig(
            iterations=int(data.get("iterations", 1)),
            n_init=int(data.get("n_init", 1)),
            n_corr=int(data.get("n_corr", 1)),
            threshold=float(data.get("threshold", 1.0)),
            sampling=SamplingParams(
                temperature=float(sampling_d.get("temperature", 1.0)),
                top_p=float(sampling_d.get("top_p", 1.0)),
                max_tokens=int(sampling_d.get("max_tokens", 512)),
            ),
            trainer=TrainerHyperparams(
                epochs=int(trainer_d.get("epochs", 1)),
                batch_size=int(trainer_d.get("batch_size", 8)),
                learning_rate=float(trainer_d.get("learning_rate", 7e-6)),
                weight_decay=float(trainer_d.get("weight_decay", 0.1)),
                schedule=str(trainer_d.get("schedule", "cosine")),
            ),
        )
        if "variant" in data and data["variant"] is not None:
            variant = variant.with_code(resolve_variant_name(str(data["variant"])))

        dataset_d = section("dataset")
        backends_d = section("backends")
        reward_d = section("reward")
        prompts_d = section("prompts")
        selection_d = section("selection")
        policy_d = section("policy")
        eval_d = section("eval")

        max_per_item = selection_d.get("max_per_item")
        return cls(
            seed=int(data.get("seed", 0)),
            variant=variant,
            base_model=str(data.get("base_model", "") or ""),
            run_dir=str(data.get("run_dir", "") or ""),
            train_dataset=str(dataset_d.get("train", "") or ""),
            test_dataset=dataset_d.get("test"),
            run_id=data.get("run_id"),
            backends=BackendsConfig(
                gen_endpoint=str(
                    backends_d.get("gen_endpoint")
                    or os.environ.get(GEN_ENDPOINT_ENV, "")
                ),
                train_endpoint=str(
                    backends_d.get("train_endpoint")
                    or os.environ.get(TRAIN_ENDPOINT_ENV, "")
                ),
                auth_token_env=str(backends_d.get("auth_token_env", DEFAULT_TOKEN_ENV)),
                request_parallelism=int(backends_d.get("request_parallelism", 4)),
                max_retries=int(backends_d.get("max_retries", 3)),
                retry_base_delay=float(backends_d.get("retry_base_delay", 0.5)),
                request_timeout=float(backends_d.get("request_timeout", 120.0)),
                poll_interval=float(backends_d.get("poll_interval", 1.0)),
                poll_timeout=float(backends_d.get("poll_timeout", 3600.0)),
            ),
            reward=RewardConfig(
                name=str(reward_d.get("name", "in_accuracy")),
                params=dict(reward_d.get("params") or {}),
                score_full_text=bool(reward_d.get("score_full_text", False)),
            ),
            prompts=PromptsConfig(
                initial=str(prompts_d.get("initial", "default")),
                correction=str(prompts_d.get("correction", "default")),
                initial_slot=str(prompts_d.get("initial_slot", "raw")),
            ),
            selection=SelectionConfig(
                max_per_item=int(max_per_item) if max_per_item is not None else None,
                dedupe=bool(selection_d.get("dedupe", False)),
            ),
            eval=EvalConfig(
                enabled=bool(eval_d.get("enabled", True)),
                aggregation=str(eval_d.get("aggregation", "mean")),
                n_init=eval_d.get("n_init"),
                n_corr=eval_d.get("n_corr"),
            ),
            empty_filter_policy=str(policy_d.get("empty_filter", "skip")),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"config file {path} must contain a mapping")
        return cls.from_dict(data)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Apply CLI-flag overrides (flags win over file values)."""
        cfg = self
        variant = cfg.variant
        if overrides.get("variant") is not None:
            variant = variant.with_code(resolve_variant_name(str(overrides["variant"])))
        for attr in ("iterations", "n_init", "n_corr", "threshold"):
            if overrides.get(attr) is not None:
                variant = replace(variant, **{attr: overrides[attr]})
        cfg = replace(cfg, variant=variant)
        if overrides.get("seed") is not None:
            cfg = replace(cfg, seed=int(overrides["seed"]))
        if overrides.get("run_dir") is not None:
            cfg = replace(cfg, run_dir=str(overrides["run_dir"]))
        if overrides.get("base_model") is not None:
            cfg = replace(cfg, base_model=str(overrides["base_model"]))
        if overrides.get("empty_filter_policy") is not None:
            cfg = replace(cfg, empty_filter_policy=str(overrides["empty_filter_policy"]))
        backends = cfg.backends
        if overrides.get("gen_endpoint") is not None:
            backends = replace(backends, gen_endpoint=str(overrides["gen_endpoint"]))
        if overrides.get("train_endpoint") is not None:
            backends = replace(backends, train_endpoint=str(overrides["train_endpoint"]))
        return replace(cfg, backends=backends)
