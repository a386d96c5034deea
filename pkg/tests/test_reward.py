import string

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from stasc.errors import ConfigurationError
from stasc.reward import in_accuracy, make_reward, normalize_answer


def contains_oracle(haystack: str, needle: str) -> bool:
    """Character-level substring scan, independent of str.__contains__."""
    n, m = len(haystack), len(needle)
    if m == 0:
        return True
    for start in range(n - m + 1):
        if all(haystack[start + k] == needle[k] for k in range(m)):
            return True
    return False


class TestNormalize:
    def test_basic(self):
        assert normalize_answer("  The  Answer. ") == "the answer"

    def test_empty(self):
        assert normalize_answer("") == ""

    def test_punctuation_to_spaces(self):
        assert normalize_answer("Ellen Page (now Elliot Page)") == "ellen page now elliot page"

    @given(st.text(max_size=200))
    def test_idempotent(self, text):
        once = normalize_answer(text)
        assert normalize_answer(once) == once

    @given(st.text(max_size=200))
    def test_casefolding(self, text):
        # Restricted to text whose uppercase form is not lossy (e.g. Turkish
        # dotless i uppercases to plain I; no casefold can undo that).
        assume(text.upper().lower() == text.lower())
        assert normalize_answer(text.upper()) == normalize_answer(text.lower())


class TestInAccuracy:
    def test_containment(self):
        assert in_accuracy("The capital is Paris.", ["Paris"]) == 1

    def test_no_containment(self):
        assert in_accuracy("I do not know.", ["Paris"]) == 0

    def test_absent_answer(self):
        assert in_accuracy(None, ["Paris"]) == 0

    def test_misspelling_not_contained(self):
        # Literal containment, verified against an independent character scan.
        generated, reference = "christiano ronaldo", "Cristiano Ronaldo"
        expected = contains_oracle(normalize_answer(generated), normalize_answer(reference))
        assert expected is False
        assert in_accuracy(generated, [reference]) == 0

    def test_empty_references_rejected(self):
        with pytest.raises(ConfigurationError):
            in_accuracy("anything", [])

    def test_blank_reference_never_matches(self):
        assert in_accuracy("some answer", ["  ...  "]) == 0

    @given(
        st.one_of(st.none(), st.text(max_size=80)),
        st.lists(st.text(max_size=30), min_size=1, max_size=4),
    )
    def test_binary_codomain(self, generated, references):
        assert in_accuracy(generated, references) in (0.0, 1.0)

    @given(
        st.text(max_size=80),
        st.lists(st.text(min_size=1, max_size=30), min_size=1, max_size=3),
        st.lists(st.text(min_size=1, max_size=30), min_size=0, max_size=3),
    )
    def test_monotone_under_reference_extension(self, generated, refs, extra):
        assert in_accuracy(generated, refs + extra) >= in_accuracy(generated, refs)

    @given(st.text(alphabet=string.ascii_letters + " ", min_size=1, max_size=40))
    def test_case_and_punctuation_invariance(self, reference):
        generated = f"well, the answer is: {reference}!"
        noisy_gen = generated.upper().replace(" ", " , ")
        assert in_accuracy(generated, [reference]) == in_accuracy(
            noisy_gen, [reference.lower()]
        )

    @given(
        st.text(max_size=60),
        st.lists(st.text(min_size=1, max_size=20), min_size=1, max_size=3),
    )
    def test_matches_substring_oracle(self, generated, references):
        expected = 1.0 if any(
            normalize_answer(r) and contains_oracle(normalize_answer(generated), normalize_answer(r))
            for r in references
        ) else 0.0
        assert in_accuracy(generated, references) == expected


class TestRegistry:
    def test_default_lookup(self):
        fn = make_reward("in_accuracy")
        assert fn("Paris is nice", ["paris"]) == 1.0

    def test_unknown_name(self):
        with pytest.raises(ConfigurationError, match="unknown reward"):
            make_reward("bleu")

    def test_normalize_toggle(self):
        fn = make_reward("in_accuracy", {"normalize": False})
        assert fn("Paris", ["paris"]) == 0.0
        assert fn("Paris", ["Paris"]) == 1.0
