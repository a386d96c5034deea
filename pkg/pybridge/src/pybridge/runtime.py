"""Loads checkpoints and samples completions with the requested parameters."""
from __future__ import annotations

import logging
import threading
from pathlib import Path

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from .registry import ServedModelRegistry

logger = logging.getLogger(__name__)


class PromptTooLong(ValueError):
    pass


def load_checkpoint(directory: Path):
    model = AutoModelForCausalLM.from_pretrained(str(directory))
    model.eval()
    tokenizer = AutoTokenizer.from_pretrained(str(directory))
    return model, tokenizer


class GenerationRuntime:
    """Caches loaded models; serializes sampling so per-request seeds hold.

    Requests are accepted concurrently at the HTTP layer, but the sampling
    itself runs under a lock: torch's sampling RNG is process-global, and the
    seed contract (same request, same outputs) requires exclusive use of it.
    """

    def __init__(self, registry: ServedModelRegistry, device: str = "cpu") -> None:
        self.registry = registry
        self.device = device
        self._cache: dict[str, tuple] = {}
        self._cache_lock = threading.Lock()
        self._generate_lock = threading.Lock()

    def _get(self, model_id: str):
        with self._cache_lock:
            if model_id not in self._cache:
                directory = self.registry.resolve(model_id)
                logger.info("loading model %s from %s", model_id, directory)
                model, tokenizer = load_checkpoint(directory)
                model.to(self.device)
                self._cache[model_id] = (model, tokenizer)
            return self._cache[model_id]

    def evict(self, model_id: str) -> None:
        with self._cache_lock:
            self._cache.pop(model_id, None)

    def generate(
        self,
        model_id: str,
        prompt: str,
        *,
        num_samples: int,
        temperature: float,
        top_p: float,
        max_tokens: int,
        seed: int,
    ) -> list[str]:
        model, tokenizer = self._get(model_id)
        inputs = tokenizer(prompt, return_tensors="pt")
        input_ids = inputs.input_ids.to(self.device)
        limit = getattr(model.config, "n_positions", None) or getattr(
            model.config, "max_position_embeddings", 1024
        )
        if input_ids.shape[1] + max_tokens > limit:
            raise PromptTooLong(
                f"prompt is {input_ids.shape[1]} tokens; with max_tokens={max_tokens} "
                f"it exceeds the model's {limit}-token window"
            )
        do_sample = temperature > 0
        kwargs = dict(
            max_new_tokens=max_tokens,
            do_sample=do_sample,
            pad_token_id=tokenizer.eos_token_id,
            eos_token_id=tokenizer.eos_token_id,
        )
        if do_sample:
            kwargs.update(temperature=temperature, top_p=top_p, num_return_sequences=num_samples)
        with self._generate_lock, torch.no_grad():
            torch.manual_seed(seed)
            output = model.generate(input_ids, **kwargs)
            texts = [
                tokenizer.decode(row[input_ids.shape[1]:], skip_special_tokens=True)
                for row in output
            ]
        if not do_sample:
            # Greedy decoding is deterministic; one rollout serves all samples.
            texts = texts * num_samples
        return texts[:num_samples]
