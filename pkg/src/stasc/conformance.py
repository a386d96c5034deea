"""Wire-contract conformance checks, shared by every backend implementation.

The same checks run against the scripted mock server and against any real
backend server; a server conforms when every check passes. Checks exercise
status codes, field names, and lifecycle behavior only, never output content.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import requests


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


class _Failure(Exception):
    pass


def _expect(cond: bool, detail: str) -> None:
    if not cond:
        raise _Failure(detail)


def _chat_payload(model: str, prompt: str, n: int = 1, seed: int = 7) -> dict:
    return {
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "n": n,
        "temperature": 0.0,
        "top_p": 1.0,
        "max_tokens": 32,
        "seed": seed,
    }


def _poll_job(train_url: str, job_id: str, timeout: float, interval: float) -> dict:
    deadline = time.monotonic() + timeout
    while True:
        resp = requests.get(f"{train_url}/jobs/{job_id}", timeout=30)
        _expect(resp.status_code == 200, f"poll returned HTTP {resp.status_code}")
        data = resp.json()
        if data.get("status") in ("succeeded", "failed"):
            return data
        _expect(data.get("status") == "running", f"unexpected status {data.get('status')!r}")
        _expect(time.monotonic() < deadline, f"job {job_id} still running after {timeout}s")
        time.sleep(interval)


def run_conformance(
    gen_url: str,
    train_url: str,
    *,
    model: str,
    workdir: str | Path,
    prompt: str = "Question: What is two plus two?\nAnswer briefly.",
    train_timeout: float = 300.0,
    poll_interval: float = 0.2,
) -> list[CheckResult]:
    """Run every contract check; the caller asserts all results are ok."""
    gen_url = gen_url.rstrip("/")
    train_url = train_url.rstrip("/")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    results: list[CheckResult] = []
    shared: dict[str, str] = {}

    def check(name: str, fn: Callable[[], None]) -> None:
        try:
            fn()
        except _Failure as exc:
            results.append(CheckResult(name, False, str(exc)))
        except Exception as exc:  # transport errors etc.
            results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))
        else:
            results.append(CheckResult(name, True))

    def health_gen() -> None:
        resp = requests.get(gen_url + "/health", timeout=30)
        _expect(resp.status_code == 200, f"HTTP {resp.status_code}")

    def health_train() -> None:
        resp = requests.get(train_url + "/health", timeout=30)
        _expect(resp.status_code == 200, f"HTTP {resp.status_code}")

    def models_listed() -> None:
        resp = requests.get(gen_url + "/v1/models", timeout=30)
        _expect(resp.status_code == 200, f"HTTP {resp.status_code}")
        _expect(isinstance(resp.json().get("data"), list), "no 'data' list in body")

    def chat_shape() -> None:
        resp = requests.post(
            gen_url + "/v1/chat/completions", json=_chat_payload(model, prompt, n=3), timeout=120
        )
        _expect(resp.status_code == 200, f"HTTP {resp.status_code}: {resp.text[:200]}")
        data = resp.json()
        _expect(data.get("model") == model, f"model echoed as {data.get('model')!r}")
        choices = data.get("choices")
        _expect(isinstance(choices, list) and len(choices) == 3, f"choices: {choices!r:.100}")
        for i, choice in enumerate(sorted(choices, key=lambda c: c["index"])):
            _expect(choice["index"] == i, f"choice indices not 0..n-1")
            msg = choice.get("message", {})
            _expect(msg.get("role") == "assistant", f"choice role {msg.get('role')!r}")
            _expect(isinstance(msg.get("content"), str), "choice content is not a string")

    def chat_deterministic() -> None:
        payload = _chat_payload(model, prompt, n=2, seed=123)
        first = requests.post(gen_url + "/v1/chat/completions", json=payload, timeout=120)
        second = requests.post(gen_url + "/v1/chat/completions", json=payload, timeout=120)
        _expect(first.status_code == 200 and second.status_code == 200, "request failed")
        one = [c["message"]["content"] for c in first.json()["choices"]]
        two = [c["message"]["content"] for c in second.json()["choices"]]
        _expect(one == two, "temperature=0 outputs differ between identical requests")

    def unknown_model() -> None:
        resp = requests.post(
            gen_url + "/v1/chat/completions",
            json=_chat_payload("no-such-model-xyz", prompt),
            timeout=30,
        )
        _expect(resp.status_code == 404, f"expected 404, got {resp.status_code}")
        err = resp.json().get("error")
        _expect(isinstance(err, dict) and err.get("message"), "404 body lacks error.message")

    def _submit(dataset_path: Path, base: str) -> dict:
        payload = {
            "base_model": base,
            "dataset_path": str(dataset_path),
            "records": None,
            "hyperparams": {
                "epochs": 1,
                "batch_size": 2,
                "learning_rate": 1e-5,
                "weight_decay": 0.1,
                "schedule": "cosine",
            },
            "metadata": {"suite": "conformance"},
        }
        resp = requests.post(train_url + "/jobs", json=payload, timeout=60)
        _expect(resp.status_code == 200, f"submit HTTP {resp.status_code}: {resp.text[:200]}")
        job_id = resp.json().get("job_id")
        _expect(bool(job_id), "submit response lacks job_id")
        return _poll_job(train_url, str(job_id), train_timeout, poll_interval)

    def _write_dataset(name: str, rows: list[dict]) -> Path:
        path = workdir / name
        path.write_text(
            "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows),
            encoding="utf-8",
        )
        return path

    good_rows = [
        {
            "context": "Question: What is two plus two?\nInitial Answer: five\n",
            "target": "Step-by-step reasoning: check the sum.\nFinal Answer: four\n",
            "loss_on": "target",
        },
        {
            "context": "Question: Name a primary color.\nInitial Answer: green\n",
            "target": "Step-by-step reasoning: green is secondary.\nFinal Answer: red\n",
            "loss_on": "target",
        },
    ]

    def job_lifecycle() -> None:
        dataset = _write_dataset("conformance_ok.jsonl", good_rows)
        data = _submit(dataset, model)
        _expect(
            data.get("status") == "succeeded",
            f"job ended {data.get('status')!r}: {data.get('reason')!r}",
        )
        new_id = data.get("new_model_id")
        _expect(bool(new_id), "succeeded job lacks new_model_id")
        shared["first_model"] = str(new_id)
        resp = requests.post(
            gen_url + "/v1/chat/completions",
            json=_chat_payload(str(new_id), prompt),
            timeout=120,
        )
        _expect(resp.status_code == 200, f"new model not generatable: HTTP {resp.status_code}")

    def job_distinct_ids() -> None:
        _expect("first_model" in shared, "lifecycle check did not produce a model")
        dataset = _write_dataset("conformance_ok2.jsonl", good_rows)
        data = _submit(dataset, model)
        _expect(data.get("status") == "succeeded", f"job ended {data.get('status')!r}")
        _expect(
            data.get("new_model_id") != shared["first_model"],
            f"second train reused id {data.get('new_model_id')!r}",
        )

    def job_unknown() -> None:
        resp = requests.get(train_url + "/jobs/no-such-job", timeout=30)
        _expect(resp.status_code == 404, f"expected 404, got {resp.status_code}")
        err = resp.json().get("error")
        _expect(isinstance(err, dict) and err.get("message"), "404 body lacks error.message")

    def job_failed_reason() -> None:
        path = workdir / "conformance_bad.jsonl"
        path.write_text('{"context": "ok", "target": "ok"}\nnot json at all\n', encoding="utf-8")
        data = _submit(path, model)
        _expect(data.get("status") == "failed", f"expected failed, got {data.get('status')!r}")
        reason = data.get("reason") or ""
        _expect("line 2" in reason, f"failure reason lacks the line number: {reason!r}")

    check("health_gen", health_gen)
    check("health_train", health_train)
    check("models_listed", models_listed)
    check("chat_shape", chat_shape)
    check("chat_deterministic", chat_deterministic)
    check("unknown_model_404", unknown_model)
    check("job_lifecycle", job_lifecycle)
    check("job_distinct_ids", job_distinct_ids)
    check("job_unknown_404", job_unknown)
    check("job_failed_reason", job_failed_reason)
    return results


def format_results(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        mark = "PASS" if r.ok else "FAIL"
        lines.append(f"[{mark}] {r.name}" + (f": {r.detail}" if r.detail else ""))
    return "\n".join(lines)


def assert_conformance(results: list[CheckResult]) -> None:
    failures = [r for r in results if not r.ok]
    if failures:
        raise AssertionError("conformance failures:\n" + format_results(failures))
