"""QA dataset ingestion and the Natural Questions open-format converter.

Native format: one JSON object per line with ``id``, ``question``, and
``answers`` (a nonempty list of reference strings; ``references`` is accepted
as an alias). The converter maps the public NQ-open rows
(``{"question": ..., "answer": [...]}``) into this format, picking a
reproducible subset by stable hash of the row id rather than file order.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

from .core import QAItem
from .errors import DatasetError

DEFAULT_SUBSET_LIMIT = 500


def validate_qa_rows(text: str, source: str = "<dataset>") -> tuple[list[QAItem], list[str]]:
    """Parse and validate dataset text; returns (items, violations)."""
    items: list[QAItem] = []
    violations: list[str] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        where = f"{source}:{lineno}"
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            violations.append(f"{where}: invalid JSON ({exc.msg})")
            continue
        if not isinstance(row, dict):
            violations.append(f"{where}: row must be a JSON object")
            continue
        item_id = str(row.get("id", "")).strip()
        question = str(row.get("question", "") or "")
        answers = row.get("answers", row.get("references"))
        if not item_id:
            violations.append(f"{where}: missing id")
            continue
        if item_id in seen_ids:
            violations.append(f"{where}: duplicate id {item_id!r}")
            continue
        if not question.strip():
            violations.append(f"{where}: question is empty")
            continue
        if not isinstance(answers, list) or not answers:
            violations.append(f"{where}: answers must be a nonempty list")
            continue
        refs = tuple(str(a) for a in answers)
        if all(not r.strip() for r in refs):
            violations.append(f"{where}: all answers are blank")
            continue
        seen_ids.add(item_id)
        items.append(QAItem(id=item_id, question=question, references=refs))
    return items, violations


def load_qa_items(path: str | Path) -> list[QAItem]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    items, violations = validate_qa_rows(path.read_text(encoding="utf-8"), source=str(path))
    if violations:
        raise DatasetError("; ".join(violations[:5]) + (" ..." if len(violations) > 5 else ""))
    if not items:
        raise DatasetError(f"dataset {path} contains no items")
    return items


def check_disjoint_splits(train: list[QAItem], test: list[QAItem]) -> None:
    overlap = {i.id for i in train} & {i.id for i in test}
    if overlap:
        sample = ", ".join(sorted(overlap)[:5])
        raise DatasetError(
            f"train and test splits share {len(overlap)} item id(s): {sample}"
        )


def write_qa_items(items: list[QAItem], path: str | Path) -> None:
    lines = [
        json.dumps(
            {"id": i.id, "question": i.question, "answers": list(i.references)},
            ensure_ascii=False,
        )
        for i in items
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _stable_rank(item_id: str) -> str:
    return hashlib.sha256(item_id.encode("utf-8")).hexdigest()


def convert_nq_open(
    in_path: str | Path,
    out_path: str | Path,
    *,
    limit: Optional[int] = DEFAULT_SUBSET_LIMIT,
) -> int:
    """Convert NQ-open jsonl into the native format; returns rows written.

    Subset selection orders rows by SHA-256 of their derived id, so the same
    input file always yields the same subset regardless of row order.
    """
    in_path = Path(in_path)
    if not in_path.exists():
        raise DatasetError(f"input file not found: {in_path}")
    rows = []
    with open(in_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{in_path}:{lineno}: invalid JSON ({exc.msg})")
            question = str(row.get("question", "") or "").strip()
            answer = row.get("answer", row.get("answers"))
            if isinstance(answer, str):
                answer = [answer]
            if not question or not isinstance(answer, list) or not answer:
                raise DatasetError(
                    f"{in_path}:{lineno}: expected 'question' and nonempty 'answer' list"
                )
            item_id = f"nq-{lineno:06d}"
            rows.append(QAItem(id=item_id, question=question, references=tuple(map(str, answer))))
    if limit is not None and limit < len(rows):
        rows = sorted(rows, key=lambda i: _stable_rank(i.id))[:limit]
        rows.sort(key=lambda i: i.id)
    write_qa_items(rows, out_path)
    return len(rows)
