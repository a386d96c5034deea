"""End-to-end smoke run: the orchestrator CLI drives this server for real.

A pretrained sub-1M-parameter checkpoint answers demo questions wrong
initially and right after a revision instruction, so an EIF run with the
matching templates trains on every iteration. Asserts plumbing only (two new
model ids, metrics in range), never accuracy values.
"""
from __future__ import annotations

import json
import subprocess
import sys
import time

import yaml

from pybridge.server import create_app
from pybridge.tinymodel import (
    CORRECTION_TEMPLATE_FILE,
    INITIAL_TEMPLATE_FILE,
    demo_questions,
)

from tests.conftest import ServerThread

SMOKE_TIMEOUT_S = 1800  # the criterion's 30-minute budget


def _write_dataset(path, questions, prefix):
    rows = [
        {"id": f"{prefix}{i}", "question": q, "answers": ["blue"]}
        for i, q in enumerate(questions)
    ]
    path.write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8"
    )
    return path


def test_smoke_run(tiny_checkpoint, tmp_path):
    start = time.monotonic()
    questions = demo_questions(0)
    assert len(questions) >= 16
    train_path = _write_dataset(tmp_path / "train.jsonl", questions[:8], "sq")
    test_path = _write_dataset(tmp_path / "test.jsonl", questions[8:16], "st")
    (tmp_path / "initial.txt").write_text(INITIAL_TEMPLATE_FILE, encoding="utf-8")
    (tmp_path / "correction.txt").write_text(CORRECTION_TEMPLATE_FILE, encoding="utf-8")

    app = create_app(
        tiny_checkpoint, model_id="m0", models_dir=tmp_path / "trained", train_mode="lora"
    )
    with ServerThread(app) as server:
        config = {
            "seed": 7,
            "variant": "EIF",
            "iterations": 2,
            "n_init": 1,
            "n_corr": 2,
            "base_model": "m0",
            "run_dir": str(tmp_path / "run"),
            "dataset": {"train": str(train_path), "test": str(test_path)},
            "backends": {
                "gen_endpoint": server.url,
                "train_endpoint": server.url,
                "poll_interval": 0.5,
                "request_timeout": 300,
            },
            "sampling": {"temperature": 0.0, "top_p": 1.0, "max_tokens": 48},
            "trainer": {"epochs": 1, "batch_size": 8, "learning_rate": 7e-6},
            "prompts": {
                "initial": str(tmp_path / "initial.txt"),
                "correction": str(tmp_path / "correction.txt"),
            },
            "eval": {"enabled": True, "aggregation": "mean"},
        }
        config_path = tmp_path / "config.yaml"
        config_path.write_text(yaml.safe_dump(config), encoding="utf-8")

        proc = subprocess.run(
            [sys.executable, "-m", "stasc.cli", "run", "--config", str(config_path)],
            capture_output=True,
            text=True,
            timeout=SMOKE_TIMEOUT_S,
        )
        assert proc.returncode == 0, f"stdout:\n{proc.stdout}\nstderr:\n{proc.stderr}"

    state = json.loads((tmp_path / "run" / "state.json").read_text(encoding="utf-8"))
    assert state["status"] == "done"
    iterations = state["iterations"]
    assert len(iterations) == 2

    produced = [rec["produced_model"] for rec in iterations]
    assert all(rec["trained"] for rec in iterations), "an iteration skipped training"
    assert len(set(produced)) == 2 and "m0" not in produced, produced
    for rec in iterations:
        assert rec["counts"]["trajectories"] == 8 * 1 * 2
        metrics = rec["metrics"]
        for key in ("initial_acc", "correction_acc", "initial_std", "correction_std"):
            assert 0.0 <= metrics[key] <= 1.0, (key, metrics)

    elapsed = time.monotonic() - start
    assert elapsed < SMOKE_TIMEOUT_S
    print(
        f"[ACCEPTANCE PASS] smoke run: 2 new models {produced} in {elapsed:.0f}s; "
        f"metrics iter1 {iterations[0]['metrics']} iter2 {iterations[1]['metrics']}"
    )
