import pytest

from pybridge.registry import ServedModelRegistry, UnknownModel
from pybridge.runtime import GenerationRuntime, PromptTooLong


@pytest.fixture
def runtime(raw_checkpoint, tmp_path):
    registry = ServedModelRegistry(tmp_path / "trained")
    registry.register("m0", raw_checkpoint)
    return GenerationRuntime(registry)


PROMPT = "Question: What is the color of object-1?\nAnswer the question.\n"


class TestGenerate:
    def test_returns_n_completions(self, runtime):
        outs = runtime.generate(
            "m0", PROMPT, num_samples=3, temperature=1.0, top_p=0.9, max_tokens=16, seed=5
        )
        assert len(outs) == 3
        assert all(isinstance(t, str) for t in outs)

    def test_greedy_is_deterministic_and_replicated(self, runtime):
        kwargs = dict(num_samples=3, temperature=0.0, top_p=1.0, max_tokens=16, seed=1)
        first = runtime.generate("m0", PROMPT, **kwargs)
        second = runtime.generate("m0", PROMPT, **kwargs)
        assert first == second
        assert len(set(first)) == 1

    def test_same_seed_same_samples(self, runtime):
        kwargs = dict(num_samples=2, temperature=1.0, top_p=0.95, max_tokens=24, seed=42)
        assert runtime.generate("m0", PROMPT, **kwargs) == runtime.generate(
            "m0", PROMPT, **kwargs
        )

    def test_different_seeds_differ(self, runtime):
        a = runtime.generate(
            "m0", PROMPT, num_samples=1, temperature=1.0, top_p=1.0, max_tokens=32, seed=1
        )
        b = runtime.generate(
            "m0", PROMPT, num_samples=1, temperature=1.0, top_p=1.0, max_tokens=32, seed=2
        )
        assert a != b

    def test_unknown_model(self, runtime):
        with pytest.raises(UnknownModel):
            runtime.generate(
                "ghost", PROMPT, num_samples=1, temperature=0.0, top_p=1.0, max_tokens=8, seed=0
            )

    def test_prompt_too_long(self, runtime):
        with pytest.raises(PromptTooLong):
            runtime.generate(
                "m0",
                "word " * 600,
                num_samples=1,
                temperature=0.0,
                top_p=1.0,
                max_tokens=64,
                seed=0,
            )
