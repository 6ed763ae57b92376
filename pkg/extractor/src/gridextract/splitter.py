"""Sentence splitting with the same rules as the grid toolkit's `split`.

Reimplemented here so the extractor has no code dependency on the
consumer package; parity is enforced by golden tests against the `ee2d
split` command. Rules: a period followed by whitespace ends a sentence
unless it closes a known abbreviation or continues a run of periods;
one-or-more !/? followed by whitespace always end one; a trailing
fragment without terminal punctuation is kept as a final sentence.
"""

from __future__ import annotations

import re

ABBREVIATIONS = (
    "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "etc.", "e.g.", "i.e.", "vs.",
    "Inc.", "St.",
)

_DELIMITER = re.compile(r"(\.|[!?]+)(\s+)")
_STEMS = tuple(a[:-1] for a in ABBREVIATIONS)


def _word_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


def _period_blocked(text: str, period_index: int) -> bool:
    """True when the period at period_index is not a sentence boundary."""
    prefix = text[:period_index]
    if prefix.endswith("."):
        return True  # inside a run of consecutive periods
    for stem in _STEMS:
        if prefix.endswith(stem):
            at = len(prefix) - len(stem)
            if at == 0 or not _word_char(prefix[at - 1]):
                return True
    return False


def split_sentences(text: str) -> list[str]:
    if not text or not text.strip():
        raise ValueError("input text is empty or whitespace-only")
    sentences = []
    start = 0
    for match in _DELIMITER.finditer(text):
        if match.group(1) == "." and _period_blocked(text, match.start(1)):
            continue
        piece = text[start:match.end(1)].strip()
        if piece:
            sentences.append(piece)
        start = match.end()
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences
