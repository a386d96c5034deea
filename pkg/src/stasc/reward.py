"""Reward functions scoring generated answers against reference answers.

The default is in-accuracy: 1 when the normalized generation contains a
normalized reference as a substring, else 0. Containment is literal, on whole
normalized strings, not token sets.
"""
from __future__ import annotations

import unicodedata
from typing import Callable, Mapping, Optional, Sequence

from .errors import ConfigurationError

# (generated answer or None, nonempty references) -> reward in [0, 1]
RewardFn = Callable[[Optional[str], Sequence[str]], float]


def normalize_answer(text: str) -> str:
    """Lowercase, NFC-normalize, map punctuation to spaces, collapse whitespace.

    Uses casefold rather than lower so case invariance holds for the full
    Unicode range (e.g. German sharp s).
    """
    text = unicodedata.normalize("NFC", text).casefold()
    chars = [c if c.isalnum() or c.isspace() else " " for c in text]
    return " ".join("".join(chars).split())


def in_accuracy(
    generated: Optional[str],
    references: Sequence[str],
    *,
    normalize: bool = True,
) -> float:
    """1.0 if any reference is contained in the generated answer, else 0.0.

    An absent (unparseable) generation scores 0. A reference that normalizes
    to the empty string never matches; it would otherwise mark everything
    correct.
    """
    if not references:
        raise ConfigurationError("in_accuracy requires a nonempty reference list")
    if generated is None:
        return 0.0
    hay = normalize_answer(generated) if normalize else generated
    for ref in references:
        needle = normalize_answer(ref) if normalize else ref
        if needle and needle in hay:
            return 1.0
    return 0.0


def _make_in_accuracy(params: Mapping[str, object]) -> RewardFn:
    normalize = bool(params.get("normalize", True))

    def fn(generated: Optional[str], references: Sequence[str]) -> float:
        return in_accuracy(generated, references, normalize=normalize)

    return fn


_REGISTRY: dict[str, Callable[[Mapping[str, object]], RewardFn]] = {
    "in_accuracy": _make_in_accuracy,
}


def available_rewards() -> list[str]:
    return sorted(_REGISTRY)


def make_reward(name: str, params: Mapping[str, object] | None = None) -> RewardFn:
    """Resolve a reward function by registry key."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown reward function {name!r}; available: {', '.join(available_rewards())}"
        ) from None
    return factory(params or {})
