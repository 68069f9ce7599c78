"""Sentence splitting and the human/declarative sentence filter."""

from __future__ import annotations

import re

# Terminators (a period between digits is a decimal point, not a terminator),
# plus ", then" / "and then" connectors that chain consecutive actions.
_SPLIT = re.compile(
    r"(?<!\d)\.(?!\d)|[;!?]+|,\s*then\s+|,?\s+and\s+then\s+",
    flags=re.IGNORECASE,
)
_LEADING_THEN = re.compile(r"^(?:and\s+)?then\s+", flags=re.IGNORECASE)
_EDGE_PUNCT = " \t\n\r,:-\"'"

HUMAN_SUBJECTS = frozenset(
    """
    man men woman women person people boy boys girl girls child children kid kids
    baby babies adult adults lady ladies guy guys he she they someone somebody
    player players gentleman gentlemen toddler toddlers teenager teenagers
    """.split()
)
INTERROGATIVES = frozenset(
    "what who whom whose which where when why how is are was were do does did can could will would".split()
)


class SentenceError(ValueError):
    pass


def normalize_sentence(text: str) -> str:
    """Trim edge punctuation and whitespace, collapse inner spaces, lowercase."""
    text = " ".join(text.split()).strip(_EDGE_PUNCT).rstrip(".;!?").strip(_EDGE_PUNCT)
    return text.lower()


def split_sentences(description: str) -> list[str]:
    """Break a multi-action description into short single-action sentences, in order."""
    out = []
    for frag in _SPLIT.split(description):
        frag = _LEADING_THEN.sub("", frag.strip())
        frag = normalize_sentence(frag)
        if frag:
            out.append(frag)
    if not out:
        raise SentenceError(f"description {description!r} contains no sentence")
    return out


def is_human_declarative(sentence: str, subjects=HUMAN_SUBJECTS) -> bool:
    """True for statements (no question) that mention a human subject."""
    if "?" in sentence:
        return False
    words = re.findall(r"[a-z]+", sentence.lower())
    if not words or words[0] in INTERROGATIVES:
        return False
    return any(w in subjects for w in words)
