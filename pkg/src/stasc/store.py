"""Run-directory layout and atomic file IO.

Every artifact is written whole-file via write-then-rename, so a crash leaves
either the previous committed version or a stray ``*.tmp-*`` file that resume
sweeps away. Log rows and prompt stores use canonical (key-sorted, compact)
JSON, which is what makes byte-identical replay and golden files possible.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Optional

from .core import AnswerSample, CorrectionSample, QAItem, Trajectory
from .errors import StateIntegrityError
from .state import RunState
from .util import canonical_json, jsonl_bytes

INITIALS_FILE = "initials.jsonl"
TRAJECTORIES_FILE = "trajectories.jsonl"
PROMPTS_INITIAL_FILE = "prompts_initial.json"
PROMPTS_CORRECTION_FILE = "prompts_correction.json"
DATASET_FILE = "dataset.jsonl"
EVAL_FILE = "eval.json"


def atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- log row codecs ---------------------------------------------------------


def initial_row(seq: int, iteration: int, sample: AnswerSample, reward: float) -> dict:
    return {
        "kind": "initial",
        "seq": seq,
        "iteration": iteration,
        "item_id": sample.item_id,
        "sample_index": sample.sample_index,
        "model": sample.producer_model,
        "prompt_sha": sample.prompt_sha,
        "raw_text": sample.raw_text,
        "parsed_answer": sample.parsed_answer,
        "reward": reward,
    }


def row_to_initial(row: dict) -> tuple[AnswerSample, float]:
    sample = AnswerSample(
        item_id=row["item_id"],
        sample_index=row["sample_index"],
        raw_text=row["raw_text"],
        parsed_answer=row["parsed_answer"],
        producer_model=row["model"],
        prompt_sha=row["prompt_sha"],
    )
    return sample, float(row["reward"])


def trajectory_row(seq: int, iteration: int, traj: Trajectory) -> dict:
    return {
        "kind": "trajectory",
        "seq": seq,
        "iteration": iteration,
        "item_id": traj.item.id,
        "initial_index": traj.initial.sample_index,
        "correction_index": traj.correction.correction_index,
        "initial_model": traj.initial.producer_model,
        "correction_model": traj.correction.producer_model,
        "initial_prompt_sha": traj.initial.prompt_sha,
        "correction_prompt_sha": traj.correction.prompt_sha,
        "initial_raw": traj.initial.raw_text,
        "initial_parsed": traj.initial.parsed_answer,
        "correction_raw": traj.correction.raw_text,
        "correction_parsed": traj.correction.parsed_answer,
        "reward_initial": traj.reward_initial,
        "reward_correction": traj.reward_correction,
    }


def row_to_trajectory(row: dict, items_by_id: dict[str, QAItem]) -> Trajectory:
    item = items_by_id.get(row["item_id"])
    if item is None:
        raise StateIntegrityError(f"trajectory references unknown item {row['item_id']!r}")
    initial = AnswerSample(
        item_id=row["item_id"],
        sample_index=row["initial_index"],
        raw_text=row["initial_raw"],
        parsed_answer=row["initial_parsed"],
        producer_model=row["initial_model"],
        prompt_sha=row["initial_prompt_sha"],
    )
    correction = CorrectionSample(
        item_id=row["item_id"],
        initial_index=row["initial_index"],
        correction_index=row["correction_index"],
        raw_text=row["correction_raw"],
        parsed_answer=row["correction_parsed"],
        producer_model=row["correction_model"],
        prompt_sha=row["correction_prompt_sha"],
    )
    return Trajectory(
        item=item,
        initial=initial,
        correction=correction,
        reward_initial=float(row["reward_initial"]),
        reward_correction=float(row["reward_correction"]),
    )


class RunDirectory:
    """Paths and committed-file IO for one run."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    @property
    def state_path(self) -> Path:
        return self.root / "state.json"

    @property
    def config_path(self) -> Path:
        return self.root / "config.yaml"

    @property
    def report_text_path(self) -> Path:
        return self.root / "report.txt"

    @property
    def report_json_path(self) -> Path:
        return self.root / "report.json"

    @property
    def curves_path(self) -> Path:
        return self.root / "curves.csv"

    def iter_dir(self, n: int) -> Path:
        return self.root / f"iter_{n:03d}"

    def iter_file(self, n: int, name: str) -> Path:
        return self.iter_dir(n) / name

    def dataset_path(self, n: int) -> Path:
        return self.iter_file(n, DATASET_FILE)

    # -- lifecycle ----------------------------------------------------------

    def initialize(self, config_yaml: str) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        atomic_write_text(self.config_path, config_yaml)

    def exists(self) -> bool:
        return self.state_path.exists()

    def sweep_tmp_files(self) -> None:
        """Remove leftovers from writes interrupted before their rename."""
        for path in self.root.rglob("*.tmp-*"):
            path.unlink(missing_ok=True)

    def discard_step_file(self, n: int, name: str) -> None:
        self.iter_file(n, name).unlink(missing_ok=True)

    # -- state --------------------------------------------------------------

    def save_state(self, state: RunState) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        atomic_write_text(self.state_path, state.to_json())

    def load_state(self) -> RunState:
        if not self.state_path.exists():
            raise StateIntegrityError(f"no state file at {self.state_path}")
        return RunState.from_json(self.state_path.read_text(encoding="utf-8"))

    # -- committed step artifacts --------------------------------------------

    def commit_rows(self, n: int, name: str, rows: Iterable[dict]) -> None:
        self.iter_dir(n).mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(self.iter_file(n, name), jsonl_bytes(rows))

    def read_rows(self, n: int, name: str) -> list[dict]:
        path = self.iter_file(n, name)
        if not path.exists():
            raise StateIntegrityError(f"missing committed step file {path}")
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
        return rows

    def commit_prompts(self, n: int, name: str, prompts: dict[str, str]) -> None:
        self.iter_dir(n).mkdir(parents=True, exist_ok=True)
        atomic_write_text(self.iter_file(n, name), canonical_json(prompts) + "\n")

    def read_prompts(self, n: int, name: str) -> dict[str, str]:
        path = self.iter_file(n, name)
        if not path.exists():
            raise StateIntegrityError(f"missing committed prompt store {path}")
        return json.loads(path.read_text(encoding="utf-8"))

    def commit_dataset(self, n: int, data: bytes) -> None:
        self.iter_dir(n).mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(self.dataset_path(n), data)

    def commit_eval(self, n: int, payload: dict) -> None:
        self.iter_dir(n).mkdir(parents=True, exist_ok=True)
        atomic_write_text(self.iter_file(n, EVAL_FILE), canonical_json(payload) + "\n")

    def read_eval(self, n: int) -> Optional[dict]:
        path = self.iter_file(n, EVAL_FILE)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))
