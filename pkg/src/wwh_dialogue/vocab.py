"""Word-level vocabulary over the closed synthetic language.

Special tokens occupy the first eleven ids in a fixed order; word tokens
follow, sorted by corpus frequency (descending) then lexicographically, so
the same corpora always produce the same table. The on-disk format is one
token per line; the line number is the id.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .corpus import Episode
from .textnorm import words

BOS = "<BOS>"
EOS = "<EOS>"
SEP = "<SEP>"
USR = "<USR>"
AGT = "<AGT>"
DEMO = "<DEMO>"
PERSONA = "<PERSONA>"
PRTL_TOK = "<PRTL>"
CRTL_TOK = "<CRTL>"
PAD = "<PAD>"
UNK = "<UNK>"

SPECIALS = (BOS, EOS, SEP, USR, AGT, DEMO, PERSONA, PRTL_TOK, CRTL_TOK, PAD, UNK)


class VocabError(ValueError):
    """Vocabulary construction or lookup failure."""


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    _ids: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})
        if self.tokens[: len(SPECIALS)] != SPECIALS:
            raise VocabError("special tokens missing or out of order")
        if len(self._ids) != len(self.tokens):
            raise VocabError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError as exc:
            raise VocabError(f"token {token!r} not in vocabulary") from exc

    def encode_word(self, word: str) -> int:
        return self._ids.get(word, self._ids[UNK])

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise VocabError(f"id {idx} out of range for vocabulary of {len(self.tokens)}")
        return self.tokens[idx]

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = tuple(line.rstrip("\n") for line in fh if line.rstrip("\n"))
        return cls(tokens=tokens)


def _corpus_words(episodes: list[Episode]):
    for ep in episodes:
        yield from words(ep.demographics.gender)
        yield from words(ep.demographics.age_band)
        for attr in ep.persona_pool:
            yield from words(attr.text)
        for session in ep.sessions:
            for turn in session.turns:
                yield from words(turn.text)


def build_vocab(corpora: list[list[Episode]], min_count: int = 1) -> Vocabulary:
    """Frequency-then-lexicographic word table over one or more corpora."""
    if not corpora or all(not eps for eps in corpora):
        raise VocabError("cannot build a vocabulary from empty corpora")
    counts: dict[str, int] = {}
    for episodes in corpora:
        for w in _corpus_words(episodes):
            counts[w] = counts.get(w, 0) + 1
    kept = [w for w, c in counts.items() if c >= min_count]
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(tokens=SPECIALS + tuple(kept))
