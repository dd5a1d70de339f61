"""Shared lowercase tokenizer: whitespace plus punctuation splitting.

Angle-bracket markers (``<user>``) and square-bracket placeholders
(``[value_time]``) are kept as single tokens so serialized sequences and
delexicalized responses survive a tokenize/join round trip.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"<[a-z_]+>|\[[a-z_]+\]|[a-z0-9']+|[^\w\s]")

STOPWORDS = frozenset(
    """a an the i you he she it we they me him her them my your his its our their
    this that these those is are was were be been being am do does did have has
    had will would can could should may might must of to in on at by for with
    about and or but not no so if then than as from there here what when where
    who whom which how why yes please thanks thank hi hello ok okay""".split()
)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


def find_word(text: str, value: str) -> int:
    """Position of a case-insensitive, word-anchored occurrence of
    ``value`` in ``text``, or -1. Anchoring keeps values from matching
    inside larger words."""
    pattern = r"(?<!\w)" + re.escape(value) + r"(?!\w)"
    match = re.search(pattern, text, flags=re.IGNORECASE)
    return match.start() if match else -1


def contains_word(text: str, value: str) -> bool:
    return find_word(text, value) >= 0


def content_words(text: str, limit: int = 3) -> list[str]:
    """First ``limit`` non-stopword alphabetic tokens; used to derive
    search queries from utterances."""
    words = []
    for token in tokenize(text):
        if token.isalpha() and token not in STOPWORDS:
            words.append(token)
            if len(words) == limit:
                break
    return words
