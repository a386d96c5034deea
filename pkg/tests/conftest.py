"""Shared fixtures: tiny QA datasets, run configs, and mock scripts."""
from __future__ import annotations

import json
from pathlib import Path

import pytest

from stasc.config import RunConfig
from stasc.core import QAItem
from stasc.mock import MockBackend, MockRule, MockScript


def make_items(n: int = 3, prefix: str = "q", offset: int = 0) -> list[QAItem]:
    items = []
    for i in range(offset, offset + n):
        items.append(
            QAItem(
                id=f"{prefix}{i}",
                question=f"What is the color of object {prefix}{i}?",
                references=(f"color-{prefix}{i}",),
            )
        )
    return items


def write_items(items: list[QAItem], path: Path) -> Path:
    rows = [
        {"id": i.id, "question": i.question, "answers": list(i.references)} for i in items
    ]
    path.write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8"
    )
    return path


def corrections_fix_rules() -> list[MockRule]:
    """Initial answers wrong (fallback), every correction right: all improve."""
    return [MockRule(stage="correction", respond="correct")]


def nothing_improves_rules() -> list[MockRule]:
    """Every answer wrong: no trajectory ever improves."""
    return [MockRule(respond="wrong")]


def make_run_config(
    tmp_path: Path,
    *,
    variant: str = "EIF",
    iterations: int = 1,
    n_init: int = 1,
    n_corr: int = 1,
    threshold: float = 1.0,
    seed: int = 1234,
    n_items: int = 3,
    eval_enabled: bool = False,
    n_test_items: int = 2,
    empty_filter_policy: str = "skip",
    run_subdir: str = "run",
    gen_endpoint: str = "mock://injected",
    train_endpoint: str = "mock://injected",
    **extra,
) -> tuple[RunConfig, list[QAItem], list[QAItem]]:
    train_items = make_items(n_items)
    test_items = make_items(n_test_items, prefix="t") if eval_enabled else []
    train_path = write_items(train_items, tmp_path / "train.jsonl")
    data: dict = {
        "seed": seed,
        "variant": variant,
        "iterations": iterations,
        "n_init": n_init,
        "n_corr": n_corr,
        "threshold": threshold,
        "base_model": "m0",
        "run_dir": str(tmp_path / run_subdir),
        "dataset": {"train": str(train_path)},
        "backends": {
            "gen_endpoint": gen_endpoint,
            "train_endpoint": train_endpoint,
            "retry_base_delay": 0.01,
            "poll_interval": 0.01,
        },
        "eval": {"enabled": eval_enabled},
    }
    if eval_enabled:
        test_path = write_items(test_items, tmp_path / "test.jsonl")
        data["dataset"]["test"] = str(test_path)
    data["policy"] = {"empty_filter": empty_filter_policy}
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key].update(value)
        else:
            data[key] = value
    return RunConfig.from_dict(data), train_items, test_items


def make_mock(
    items: list[QAItem],
    extra_items: list[QAItem] | None = None,
    rules: list[MockRule] | None = None,
    **script_kw,
) -> MockBackend:
    all_items = list(items) + list(extra_items or [])
    script = MockScript.for_items(
        all_items, rules=rules if rules is not None else corrections_fix_rules(), **script_kw
    )
    return MockBackend(script)


@pytest.fixture
def items() -> list[QAItem]:
    return make_items(3)


@pytest.fixture
def golden_dir() -> Path:
    return Path(__file__).parent / "goldens"
