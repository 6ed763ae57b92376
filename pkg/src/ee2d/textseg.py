"""Rule-based sentence splitting.

Two regular expressions drive the split: a set of negative look-behinds
that veto non-boundary periods (abbreviations, runs of consecutive
periods) and an active delimiter match (a period followed by whitespace,
or one-or-more !/? followed by whitespace). Only ASCII .!? terminate
sentences; trailing text without terminal punctuation forms a final
sentence.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import EmptyInput, SchemaError

# Fixed default list; override per call or via a one-abbreviation-per-line file.
DEFAULT_ABBREVIATIONS = (
    "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "etc.", "e.g.", "i.e.", "vs.",
    "Inc.", "St.",
)


@dataclass
class SentenceList:
    """Ordered sentences plus the character count of the source text."""

    sentences: list[str] = field(default_factory=list)
    source_length: int = 0

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)


def _compile_delimiter(abbreviations) -> re.Pattern:
    guards = []
    for abbr in abbreviations:
        stem = abbr.strip()
        if stem.endswith("."):
            stem = stem[:-1]
        if not stem:
            raise SchemaError(f"abbreviation {abbr!r} has no text before the period")
        # One fixed-width look-behind per abbreviation stem.
        guards.append(rf"(?<!\b{re.escape(stem)})")
    # (?<!\.) suppresses splits inside runs of consecutive periods ("...").
    period = "".join(guards) + r"(?<!\.)\."
    return re.compile(rf"((?:{period})|(?:[!?]+))(\s+)")


def split_sentences(text: str, abbreviations=DEFAULT_ABBREVIATIONS) -> SentenceList:
    """Split text into sentences; raises EmptyInput on blank input."""
    if not text or not text.strip():
        raise EmptyInput("input text is empty or whitespace-only")
    delimiter = _compile_delimiter(abbreviations)
    sentences = []
    start = 0
    for match in delimiter.finditer(text):
        piece = text[start:match.end(1)].strip()
        if piece:
            sentences.append(piece)
        start = match.end()
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return SentenceList(sentences=sentences, source_length=len(text))


def load_abbreviations(path) -> tuple[str, ...]:
    """Read a one-abbreviation-per-line override file."""
    with open(path, encoding="utf-8") as fh:
        entries = [line.strip() for line in fh]
    entries = [e for e in entries if e]
    if not entries:
        raise SchemaError(f"{path}: abbreviation file is empty")
    return tuple(entries)
