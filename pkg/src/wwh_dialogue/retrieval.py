"""Lexical persona retrieval: an IDF-weighted cosine index over one user's pool.

Given a dialogue context, the index ranks the user's persona attributes by
cosine similarity between the content words of each attribute and the content
words of the most recent user turns. Scores are deterministic and the
arithmetic follows one canonical convention so an exhaustive brute-force
re-computation reproduces every score bit-for-bit:

  - a text's vector has one component per distinct content word, weighted
    ``count * idf`` (IDF table built over the pool, one attribute = one doc);
  - squared norms and dot products accumulate with plain float addition in
    sorted-word order, squares computed as ``v * v``;
  - ``score = dot / (attr_norm * query_norm)``, and 0.0 whenever either
    vector is empty;
  - ranking sorts by descending score with ties broken by ascending
    attribute id.

The index is rebuilt whole on every pool mutation, so retrieval is always a
pure function of (current pool, query, top_k).
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from .augmentation import CASUAL, NPR, PersonaSubset
from .corpus import USER, PersonaAttribute
from .evaluation import IdfTable, build_idf_table
from .textnorm import stopwords, words

DEFAULT_TOP_K = 5
QUERY_USER_TURNS = 2


class RetrievalError(ValueError):
    """Invalid retrieval request or pool mutation."""


@dataclass(frozen=True)
class RankedAttribute:
    """One attribute with its query similarity."""

    attribute: PersonaAttribute
    score: float


def content_counts(text: str) -> dict[str, int]:
    """Content-word term counts of `text` (stopwords removed)."""
    stop = stopwords()
    return Counter(w for w in words(text) if w not in stop)


def _weights(counts: dict[str, int], idf: IdfTable) -> dict[str, float]:
    return {w: counts[w] * idf.idf(w) for w in sorted(counts)}


def _norm(weights: dict[str, float]) -> float:
    s = 0.0
    for w in sorted(weights):
        v = weights[w]
        s += v * v
    return math.sqrt(s)


def query_from_turns(turns: Iterable, n_user: int = QUERY_USER_TURNS) -> str:
    """Join the last `n_user` USER utterances into one query string.

    Accepts `Turn`-like objects (``.speaker``/``.text``) or ``(speaker, text)``
    pairs. Word counts are insensitive to the join order, so the query vector
    is exactly the bag union of the selected turns.
    """
    texts = []
    for turn in turns:
        if isinstance(turn, tuple):
            speaker, text = turn
        else:
            speaker, text = turn.speaker, turn.text
        if speaker == USER:
            texts.append(text)
    return " ".join(texts[-n_user:]) if n_user > 0 else ""


class PersonaIndex:
    """Inverted index over one user's persona attributes.

    Mutations (`add`/`remove`/`replace_pool`) rebuild the whole index, so the
    postings, IDF table, and norms always reflect the current pool exactly.
    """

    def __init__(self, attributes: Iterable[PersonaAttribute] = (), top_k: int = DEFAULT_TOP_K):
        if top_k < 1:
            raise RetrievalError(f"top_k must be >= 1, got {top_k}")
        self.top_k = top_k
        self._attrs: dict[str, PersonaAttribute] = {}
        for attr in attributes:
            if attr.id in self._attrs:
                raise RetrievalError(f"duplicate persona attribute id {attr.id!r}")
            self._attrs[attr.id] = attr
        self._rebuild()

    # -- pool management ----------------------------------------------------

    def attributes(self) -> list[PersonaAttribute]:
        """Current pool, sorted by attribute id."""
        return [self._attrs[aid] for aid in sorted(self._attrs)]

    def __len__(self) -> int:
        return len(self._attrs)

    def __contains__(self, attr_id: str) -> bool:
        return attr_id in self._attrs

    def add(self, attribute: PersonaAttribute) -> None:
        if attribute.id in self._attrs:
            raise RetrievalError(f"duplicate persona attribute id {attribute.id!r}")
        self._attrs[attribute.id] = attribute
        self._rebuild()

    def remove(self, attr_id: str) -> PersonaAttribute:
        if attr_id not in self._attrs:
            raise RetrievalError(f"unknown persona attribute id {attr_id!r}")
        removed = self._attrs.pop(attr_id)
        self._rebuild()
        return removed

    def replace_pool(self, attributes: Iterable[PersonaAttribute]) -> None:
        attrs: dict[str, PersonaAttribute] = {}
        for attr in attributes:
            if attr.id in attrs:
                raise RetrievalError(f"duplicate persona attribute id {attr.id!r}")
            attrs[attr.id] = attr
        self._attrs = attrs
        self._rebuild()

    def _rebuild(self) -> None:
        ordered = sorted(self._attrs)
        self._idf = build_idf_table(self._attrs[aid].text for aid in ordered)
        self._vec: dict[str, dict[str, float]] = {}
        self._norms: dict[str, float] = {}
        self._postings: dict[str, list[tuple[str, float]]] = {}
        for aid in ordered:
            weights = _weights(content_counts(self._attrs[aid].text), self._idf)
            self._vec[aid] = weights
            self._norms[aid] = _norm(weights)
            for word, weight in weights.items():
                self._postings.setdefault(word, []).append((aid, weight))

    @property
    def posting_count(self) -> int:
        """Total posting entries: one per (attribute, distinct content word)."""
        return sum(len(plist) for plist in self._postings.values())

    @property
    def idf(self) -> IdfTable:
        """The pool-derived IDF table the index scores with."""
        return self._idf

    # -- scoring ------------------------------------------------------------

    def score_all(self, query_text: str) -> list[RankedAttribute]:
        """Every attribute ranked by IDF-weighted cosine against the query."""
        q_weights = _weights(content_counts(query_text), self._idf)
        q_norm = _norm(q_weights)
        dots = dict.fromkeys(self._attrs, 0.0)
        for word in sorted(q_weights):
            qw = q_weights[word]
            for aid, aw in self._postings.get(word, ()):
                dots[aid] += qw * aw
        ranked = []
        for aid in sorted(self._attrs):
            a_norm = self._norms[aid]
            if a_norm == 0.0 or q_norm == 0.0:
                score = 0.0
            else:
                score = dots[aid] / (a_norm * q_norm)
            ranked.append(RankedAttribute(attribute=self._attrs[aid], score=score))
        ranked.sort(key=lambda r: (-r.score, r.attribute.id))
        return ranked

    def retrieve(self, query_text: str, top_k: int | None = None) -> list[RankedAttribute]:
        """Top-k attributes for the query; fewer when the pool is smaller."""
        k = self.top_k if top_k is None else top_k
        if k < 0:
            raise RetrievalError(f"top_k must be >= 0, got {k}")
        return self.score_all(query_text)[:k]

    def retrieve_for_context(
        self, turns: Sequence, top_k: int | None = None
    ) -> list[RankedAttribute]:
        """Retrieve against the last ``QUERY_USER_TURNS`` user turns of `turns`."""
        return self.retrieve(query_from_turns(turns), top_k=top_k)


def as_subset(ranked: Sequence[RankedAttribute]) -> PersonaSubset:
    """Wrap retrieval output as the subset fed to the model at inference.

    Positives are unknown before the model speaks, so a non-empty retrieval
    carries no positive ids (the NPR shape); an empty pool degrades to the
    casual shape, and whether the response actually grounds is the model's
    own decision at the response-type slot.
    """
    attrs = tuple(r.attribute for r in ranked)
    kind = NPR if attrs else CASUAL
    return PersonaSubset(attributes=attrs, positive_ids=(), kind=kind)
