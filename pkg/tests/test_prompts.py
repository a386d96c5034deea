import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stasc.core import AnswerSample, QAItem
from stasc.errors import TemplateError
from stasc.prompts import (
    PromptTemplate,
    default_template,
    load_template,
    parse_final_answer,
    parse_template_text,
    render_correction_prompt,
    render_initial_prompt,
)


def _item(question="What is the capital of France?"):
    return QAItem(id="q1", question=question, references=("Paris",))


def _sample(raw="Step-by-step reasoning: thinking.\nFinal Answer: Lyon"):
    return AnswerSample(
        item_id="q1",
        sample_index=0,
        raw_text=raw,
        parsed_answer=parse_final_answer(raw),
        producer_model="m0",
        prompt_sha="x",
    )


class TestTemplateParsing:
    def test_front_matter(self):
        tmpl = parse_template_text("kind: initial\nmarker: Answer:\n---\nQ: {question}\n")
        assert tmpl.kind == "initial"
        assert tmpl.marker == "Answer:"
        assert tmpl.body == "Q: {question}\n"

    def test_missing_separator(self):
        with pytest.raises(TemplateError, match="---"):
            parse_template_text("kind: initial\nQ: {question}")

    def test_missing_placeholder(self):
        with pytest.raises(TemplateError, match=r"\{question\} exactly once"):
            PromptTemplate(kind="initial", marker="Final Answer:", body="no placeholder")

    def test_duplicate_placeholder(self):
        with pytest.raises(TemplateError, match="exactly once"):
            PromptTemplate(
                kind="initial", marker="Final Answer:", body="{question} {question}"
            )

    def test_empty_marker(self):
        with pytest.raises(TemplateError, match="marker"):
            PromptTemplate(kind="initial", marker="", body="{question}")

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("kind: initial\nmarker: Final Answer:\n---\nQ {question}", "utf-8")
        assert load_template(path).kind == "initial"


class TestInitialRendering:
    def test_contains_question_and_instruction(self):
        out = render_initial_prompt(default_template("initial"), _item("Q?"))
        assert "Question: Q?" in out
        assert out.rstrip().endswith(
            "Reason step by step very shortly, then conclude with the answer."
        )

    def test_wrong_kind_rejected(self):
        with pytest.raises(TemplateError, match="expected an initial template"):
            render_initial_prompt(default_template("correction"), _item())

    def test_newline_preserved_verbatim(self):
        out = render_initial_prompt(default_template("initial"), _item("line one\nline two?"))
        assert "Question: line one\nline two?" in out

    def test_deterministic(self):
        tmpl = default_template("initial")
        assert render_initial_prompt(tmpl, _item()) == render_initial_prompt(tmpl, _item())

    @given(
        st.text(min_size=1, max_size=40).filter(lambda s: s.strip()),
        st.text(min_size=1, max_size=40).filter(lambda s: s.strip()),
    )
    def test_injective_in_question(self, q1, q2):
        tmpl = default_template("initial")
        a = render_initial_prompt(tmpl, _item(q1))
        b = render_initial_prompt(tmpl, _item(q2))
        assert (a == b) == (q1 == q2)


class TestCorrectionRendering:
    def test_two_shot_exemplars_in_order(self):
        out = render_correction_prompt(default_template("correction"), _item(), _sample())
        first = out.find("Christiano Ronaldo")
        second = out.find("Ellen Page (now Elliot Page)")
        assert 0 < first < second

    def test_question_then_initial_answer_then_instruction(self):
        out = render_correction_prompt(default_template("correction"), _item(), _sample())
        q = out.rfind("Question: What is the capital of France?")
        a = out.rfind("Initial Answer: Step-by-step reasoning: thinking.")
        instr = out.rfind("Write a correction if the initial answer is incorrect.")
        assert 0 < q < a < instr

    def test_initial_inserted_verbatim_raw(self):
        raw = "Step-by-step reasoning: alpha.\nFinal Answer: beta\nextra trailing"
        out = render_correction_prompt(default_template("correction"), _item(), _sample(raw))
        assert f"Initial Answer: {raw}\n" in out

    def test_final_slot_uses_parsed_answer(self):
        out = render_correction_prompt(
            default_template("correction"), _item(), _sample(), initial_slot="final"
        )
        assert "Initial Answer: Lyon\n" in out

    def test_zero_shot_template_variant(self):
        tmpl = PromptTemplate(
            kind="correction",
            marker="Final Answer:",
            body="Question: {question}\nInitial Answer: {initial_answer}\nFix it.\n",
        )
        out = render_correction_prompt(tmpl, _item(), _sample())
        assert "Ronaldo" not in out and "Ellen Page" not in out

    def test_empty_initial_rejected(self):
        sample = AnswerSample("q1", 0, "", None, "m0", "x")
        with pytest.raises(TemplateError, match="empty"):
            render_correction_prompt(default_template("correction"), _item(), sample)

    def test_placeholder_text_inside_question_not_substituted(self):
        item = QAItem(id="q1", question="Why is {initial_answer} here?", references=("x",))
        out = render_correction_prompt(default_template("correction"), item, _sample())
        assert "Question: Why is {initial_answer} here?" in out

    def test_golden_file(self, golden_dir):
        out = render_correction_prompt(default_template("correction"), _item(), _sample())
        golden = golden_dir / "correction_prompt.txt"
        assert out == golden.read_text(encoding="utf-8")


def last_occurrence_oracle(raw: str, marker: str):
    """Forward scan collecting every occurrence; returns tail after the last."""
    lowered, needle = raw.lower(), marker.lower()
    positions, start = [], 0
    while True:
        idx = lowered.find(needle, start)
        if idx < 0:
            break
        positions.append(idx)
        start = idx + 1
    if not positions:
        return None
    tail = raw[positions[-1] + len(marker):]
    tail = re.split(r"\n[ \t]*\n", tail, maxsplit=1)[0].strip()
    return tail or None


class TestParseFinalAnswer:
    MARKER = "Final Answer:"

    def test_single_marker(self):
        assert parse_final_answer("...reasoning...\nFinal Answer: Paris\n", self.MARKER) == "Paris"

    def test_last_occurrence_wins(self):
        raw = "Final Answer: A\n...\nFinal Answer: B"
        assert parse_final_answer(raw, self.MARKER) == "B"
        assert parse_final_answer(raw, self.MARKER) == last_occurrence_oracle(raw, self.MARKER)

    def test_missing_marker(self):
        assert parse_final_answer("no marker here", self.MARKER) is None

    def test_empty_tail_is_absent(self):
        assert parse_final_answer("Final Answer:   \n\n stuff", self.MARKER) is None

    def test_truncates_at_blank_line(self):
        raw = "Final Answer: Paris is correct\n\nQuestion: next?"
        assert parse_final_answer(raw, self.MARKER) == "Paris is correct"

    def test_case_insensitive_marker(self):
        assert parse_final_answer("Final answer: Ellen Page", self.MARKER) == "Ellen Page"

    def test_correction_prompt_exemplars_need_last_wins(self):
        out = render_correction_prompt(default_template("correction"), _item(), _sample())
        completed = out + " Correction reasoning.\nFinal Answer: Paris"
        assert out.count("Final Answer:") >= 3
        assert parse_final_answer(completed, self.MARKER) == "Paris"

    @given(st.text(max_size=120), st.text(max_size=120))
    def test_matches_forward_scan_oracle(self, raw, prefix):
        raw = prefix + raw
        assert parse_final_answer(raw, self.MARKER) == last_occurrence_oracle(raw, self.MARKER)

    @given(st.text(alphabet="abc XYZ,.", min_size=1, max_size=40))
    def test_round_trip_constructed_output(self, answer):
        answer = answer.strip()
        raw = f"some reasoning here\nFinal Answer: {answer}"
        assert parse_final_answer(raw, self.MARKER) == (answer or None)
