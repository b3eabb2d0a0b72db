"""Shared lexical normalization: tokenization, stopwords, content words.

Every metric and retrieval component normalizes text through this module so
that F1, coverage, grounding similarity, and the retrieval index all agree on
what a "word" is. The stopword list ships as package data and is intentionally
small; content words are whatever survives it.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_WORD_RE = re.compile(r"[a-z0-9']+")


def words(text: str) -> list[str]:
    """Lowercased word tokens of `text`, punctuation stripped."""
    return _WORD_RE.findall(text.lower())


@lru_cache(maxsize=1)
def stopwords() -> frozenset[str]:
    """The packaged stopword list."""
    raw = resources.files("wwh_dialogue.data").joinpath("stopwords.txt").read_text()
    return frozenset(w for w in raw.split() if w and not w.startswith("#"))


def content_words(text: str) -> set[str]:
    """Distinct non-stopword tokens of `text`."""
    stop = stopwords()
    return {w for w in words(text) if w not in stop}


def jaccard(a: set[str], b: set[str]) -> float:
    """Jaccard similarity of two word sets; 0.0 when both are empty."""
    if not a and not b:
        return 0.0
    union = a | b
    return len(a & b) / len(union)
