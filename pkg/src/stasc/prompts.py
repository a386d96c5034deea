"""Prompt templates and final-answer extraction.

Templates live in standalone text files: a small front-matter header (kind and
answer marker) separated from the literal body by a ``---`` line. The body
carries ``{question}`` and, for correction templates, ``{initial_answer}``
placeholders, each required exactly once. Rendering is plain substitution, so
output bytes are stable and question text is never escaped.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .core import AnswerSample, QAItem
from .errors import TemplateError

DEFAULT_MARKER = "Final Answer:"

_KINDS = ("initial", "correction")
_REQUIRED_PLACEHOLDERS = {
    "initial": ("{question}",),
    "correction": ("{question}", "{initial_answer}"),
}
_BLANK_LINE = re.compile(r"\n[ \t]*\n")


@dataclass(frozen=True)
class PromptTemplate:
    """A validated template: its kind, answer marker, and literal body."""

    kind: str
    marker: str
    body: str
    source: str = "<inline>"

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise TemplateError(
                f"{self.source}: kind must be one of {', '.join(_KINDS)}, got {self.kind!r}"
            )
        if not self.marker:
            raise TemplateError(f"{self.source}: answer marker must be nonempty")
        for ph in _REQUIRED_PLACEHOLDERS[self.kind]:
            n = self.body.count(ph)
            if n != 1:
                raise TemplateError(
                    f"{self.source}: template body must contain {ph} exactly once, found {n}"
                )


def parse_template_text(text: str, source: str = "<inline>") -> PromptTemplate:
    """Parse the front-matter header and body of a template file."""
    head, sep, body = text.partition("\n---\n")
    if not sep:
        raise TemplateError(f"{source}: missing '---' separator after the header")
    fields = {}
    for lineno, line in enumerate(head.splitlines(), start=1):
        if not line.strip():
            continue
        key, colon, value = line.partition(":")
        if not colon:
            raise TemplateError(f"{source}:{lineno}: header line has no 'key: value'")
        fields[key.strip().lower()] = value.strip()
    if "kind" not in fields:
        raise TemplateError(f"{source}: header must declare 'kind'")
    marker = fields.get("marker", DEFAULT_MARKER)
    return PromptTemplate(kind=fields["kind"], marker=marker, body=body, source=source)


def load_template(path: str | Path) -> PromptTemplate:
    path = Path(path)
    return parse_template_text(path.read_text(encoding="utf-8"), source=str(path))


def default_template(kind: str) -> PromptTemplate:
    """The built-in initial/correction template shipped with the package."""
    if kind not in _KINDS:
        raise TemplateError(f"no default template of kind {kind!r}")
    text = (resources.files("stasc") / "templates" / f"{kind}.txt").read_text(
        encoding="utf-8"
    )
    return parse_template_text(text, source=f"<default:{kind}>")


_PLACEHOLDER = re.compile(r"\{question\}|\{initial_answer\}")


def _substitute(body: str, values: dict[str, str]) -> str:
    # Single pass over the template, so substituted text is never re-scanned
    # (a question containing a literal placeholder stays verbatim).
    return _PLACEHOLDER.sub(lambda m: values.get(m.group(0), m.group(0)), body)


def render_initial_prompt(tmpl: PromptTemplate, item: QAItem) -> str:
    if tmpl.kind != "initial":
        raise TemplateError(f"{tmpl.source}: expected an initial template, got {tmpl.kind!r}")
    return _substitute(tmpl.body, {"{question}": item.question})


def render_correction_prompt(
    tmpl: PromptTemplate,
    item: QAItem,
    initial: AnswerSample,
    *,
    initial_slot: str = "raw",
) -> str:
    """Render the correction prompt for one sampled initial answer.

    ``initial_slot`` picks what fills the "Initial Answer" slot: the full
    sampled text including its reasoning (``raw``, the default) or just the
    extracted final answer (``final``; falls back to raw when extraction
    failed, since the slot must not be empty).
    """
    if tmpl.kind != "correction":
        raise TemplateError(f"{tmpl.source}: expected a correction template, got {tmpl.kind!r}")
    if not initial.raw_text:
        raise TemplateError("initial answer text is empty; cannot render a correction prompt")
    if initial_slot == "raw":
        answer_text = initial.raw_text
    elif initial_slot == "final":
        answer_text = initial.parsed_answer or initial.raw_text
    else:
        raise TemplateError(f"unknown initial_slot {initial_slot!r} (use 'raw' or 'final')")
    return _substitute(
        tmpl.body, {"{question}": item.question, "{initial_answer}": answer_text}
    )


def parse_final_answer(raw: str, marker: str = DEFAULT_MARKER) -> Optional[str]:
    """Extract the text after the LAST occurrence of the answer marker.

    Matching is case-insensitive (prompts in the wild mix "Final Answer:" and
    "Final answer:"), the tail is truncated at the first blank line, and the
    result is whitespace-trimmed. Returns None when the marker never occurs or
    the trailing text is empty. Last occurrence wins because few-shot prompts
    and echoed structure contain earlier markers.
    """
    if not marker:
        raise ValueError("marker must be nonempty")
    idx = raw.lower().rfind(marker.lower())
    if idx < 0:
        return None
    tail = raw[idx + len(marker):]
    tail = _BLANK_LINE.split(tail, maxsplit=1)[0].strip()
    return tail or None
