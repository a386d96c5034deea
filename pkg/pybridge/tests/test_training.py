import json

import pytest
import torch

from pybridge.jobs import JobRunner
from pybridge.registry import ServedModelRegistry
from pybridge.runtime import GenerationRuntime, load_checkpoint
from pybridge.training import (
    DatasetFormatError,
    Hyperparams,
    context_gradient_probe,
    encode_record,
    parse_records,
    train_checkpoint,
)

RECORD = {
    "context": "Question: What is the color of object-1?\nInitial Answer: red\n",
    "target": "Step-by-step reasoning: checking.\nFinal Answer: blue\n",
    "loss_on": "target",
}


class TestDatasetParsing:
    def test_malformed_line_number(self):
        with pytest.raises(DatasetFormatError, match="line 2"):
            parse_records(json.dumps(RECORD) + "\nnot json at all\n")

    def test_missing_field_line_number(self):
        with pytest.raises(DatasetFormatError, match="line 1"):
            parse_records('{"context": "only context"}\n')

    def test_empty_dataset(self):
        with pytest.raises(DatasetFormatError, match="empty"):
            parse_records("\n\n")

    def test_blank_lines_skipped(self):
        rows = parse_records(json.dumps(RECORD) + "\n\n" + json.dumps(RECORD) + "\n")
        assert len(rows) == 2


class TestMasking:
    def test_context_positions_ignored(self, raw_checkpoint):
        _, tokenizer = load_checkpoint(raw_checkpoint)
        input_ids, labels = encode_record(tokenizer, RECORD, window=256)
        ctx_len = len(tokenizer(RECORD["context"])["input_ids"])
        assert (labels[:ctx_len] == -100).all()
        assert (labels[ctx_len:] == input_ids[ctx_len:]).all()
        assert labels[-1] == tokenizer.eos_token_id  # eos is trained as the stop signal

    def test_loss_mask_gradient_probe(self, raw_checkpoint):
        probe = context_gradient_probe(raw_checkpoint, RECORD)
        assert probe["target_grad_norm"] > 0
        assert probe["context_unmasked_grad_norm"] > 0  # probe detects a missing mask
        assert (
            probe["context_masked_grad_norm"]
            <= 1e-6 * probe["target_grad_norm"]
        )
        print(
            "[ACCEPTANCE PASS] loss-mask probe: context gradient "
            f"{probe['context_masked_grad_norm']:.2e} vs target {probe['target_grad_norm']:.2e}"
        )


class TestTrainCheckpoint:
    def test_lora_trains_and_saves_plain_checkpoint(self, raw_checkpoint, tmp_path):
        out = tmp_path / "child"
        stats = train_checkpoint(
            raw_checkpoint,
            out,
            [RECORD, RECORD],
            Hyperparams(epochs=2, batch_size=2, learning_rate=1e-3),
            mode="lora",
        )
        assert stats["steps"] == 2
        model, tokenizer = load_checkpoint(out)  # merged model loads as plain GPT-2
        base_model, _ = load_checkpoint(raw_checkpoint)
        changed = any(
            not torch.equal(p1, p2)
            for p1, p2 in zip(model.parameters(), base_model.parameters())
        )
        assert changed, "training left every weight identical"

    def test_full_mode(self, raw_checkpoint, tmp_path):
        out = tmp_path / "child-full"
        stats = train_checkpoint(
            raw_checkpoint,
            out,
            [RECORD],
            Hyperparams(epochs=1, batch_size=8, learning_rate=1e-4),
            mode="full",
        )
        assert stats["mode"] == "full"
        load_checkpoint(out)

    def test_bad_mode(self, raw_checkpoint, tmp_path):
        with pytest.raises(ValueError, match="mode"):
            train_checkpoint(raw_checkpoint, tmp_path / "x", [RECORD], Hyperparams(), mode="qlora")


class TestJobRunner:
    def test_lifecycle_and_lineage(self, raw_checkpoint, tmp_path):
        registry = ServedModelRegistry(tmp_path / "trained")
        registry.register("m0", raw_checkpoint)
        runtime = GenerationRuntime(registry)
        jobs = JobRunner(registry, runtime)
        try:
            job_id = jobs.submit(
                {
                    "base_model": "m0",
                    "records": [RECORD, RECORD],
                    "hyperparams": {"epochs": 1, "batch_size": 2},
                }
            )
            result = jobs.join_job(job_id)
            assert result["status"] == "succeeded"
            new_id = result["new_model_id"]
            assert new_id in registry.known_ids()
            assert registry.lineage()[new_id] == "m0"
            outs = runtime.generate(
                new_id, "hello", num_samples=1, temperature=0.0, top_p=1.0, max_tokens=4, seed=0
            )
            assert len(outs) == 1
        finally:
            jobs.shutdown()

    def test_failed_job_reports_reason(self, raw_checkpoint, tmp_path):
        registry = ServedModelRegistry(tmp_path / "trained")
        registry.register("m0", raw_checkpoint)
        jobs = JobRunner(registry, GenerationRuntime(registry))
        try:
            bad = tmp_path / "bad.jsonl"
            bad.write_text('{"context": "c", "target": "t"}\n{oops\n', encoding="utf-8")
            result = jobs.join_job(jobs.submit({"base_model": "m0", "dataset_path": str(bad)}))
            assert result["status"] == "failed"
            assert "line 2" in result["reason"]
        finally:
            jobs.shutdown()

    def test_unknown_base_model_fails(self, raw_checkpoint, tmp_path):
        registry = ServedModelRegistry(tmp_path / "trained")
        registry.register("m0", raw_checkpoint)
        jobs = JobRunner(registry, GenerationRuntime(registry))
        try:
            result = jobs.join_job(jobs.submit({"base_model": "ghost", "records": [RECORD]}))
            assert result["status"] == "failed"
            assert "ghost" in result["reason"]
        finally:
            jobs.shutdown()
