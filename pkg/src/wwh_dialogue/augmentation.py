"""Per-instance persona subset construction.

Every training instance gets a persona subset rho decided by a three-way
rule: personalized turns mix the ground-truth attribute(s) with sampled
negatives ("negative persona attribute augmentation"), non-personalized turns
in the annotated corpus get only irrelevant attributes ("negative persona
subset augmentation"), and casual-corpus turns get the empty set.

"Irrelevant" is operationalized two ways at once: the attribute is not
grounded by any agent turn in the current session, and (for NPR) it shares no
persona topic with the last two user turns of the context. Negatives come
from the user's own pool first; when that runs dry they are drawn from other
users' pools, re-keyed as "<owner>/<attr-id>" so ids stay unique inside a
subset.

All sampling is per-instance deterministic: the RNG stream is keyed by
(seed, dataset id, episode id, session index, turn index), so rebuilding one
instance or the whole corpus yields the same subsets.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from .blending import InstanceRef
from .corpus import PRTL, USER, Episode, PersonaAttribute, Turn
from .templates import TopicLexicon

PR = "PR"
NPR = "NPR"
CASUAL = "CASUAL"

SAME_USER = "same_user_irrelevant"
OTHER_USER = "other_user"
MIXED = "mixed"
NEGATIVE_SOURCES = (SAME_USER, OTHER_USER, MIXED)


class AugmentError(ValueError):
    """Subset construction failed for an instance."""


class InsufficientNegatives(AugmentError):
    """Not enough irrelevant attributes to fill the subset."""


@dataclass(frozen=True)
class PersonaSubset:
    """The ordered attribute list supplied to the model for one instance."""

    attributes: tuple[PersonaAttribute, ...]
    positive_ids: tuple[str, ...]
    kind: str

    def __post_init__(self):
        ids = [a.id for a in self.attributes]
        if len(set(ids)) != len(ids):
            raise AugmentError(f"duplicate attribute ids in subset: {ids}")
        if self.kind == PR:
            if not self.positive_ids:
                raise AugmentError("PR subset requires positive ids")
            if not set(self.positive_ids) <= set(ids):
                raise AugmentError("positive ids must appear in the subset")
        elif self.kind == NPR:
            if self.positive_ids:
                raise AugmentError("NPR subset cannot carry positives")
        elif self.kind == CASUAL:
            if self.attributes or self.positive_ids:
                raise AugmentError("casual subset must be empty")
        else:
            raise AugmentError(f"unknown subset kind {self.kind!r}")

    def texts(self) -> tuple[str, ...]:
        return tuple(a.text for a in self.attributes)


@dataclass(frozen=True)
class AugmentConfig:
    k: int = 5
    negative_source: str = SAME_USER
    rng_seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise AugmentError("k must be >= 1")
        if self.negative_source not in NEGATIVE_SOURCES:
            raise AugmentError(
                f"negative_source must be one of {NEGATIVE_SOURCES}, got {self.negative_source!r}"
            )


def kind_for_turn(dataset_is_casual: bool, rtl: str | None) -> str:
    """PR/NPR/CASUAL assignment is a pure function of source dataset and label."""
    if dataset_is_casual:
        return CASUAL
    return PR if rtl == PRTL else NPR


@dataclass(frozen=True)
class ForeignEntry:
    owner: str
    topics: frozenset[str]
    attribute: PersonaAttribute


@dataclass(frozen=True)
class ForeignPool:
    """All users' attributes, re-keyed by owner, for cross-user negatives."""

    entries: tuple[ForeignEntry, ...] = ()


def build_foreign_pool(episodes: list[Episode], lexicon: TopicLexicon) -> ForeignPool:
    entries = []
    for ep in episodes:
        for attr in ep.persona_pool:
            rekeyed = replace(attr, id=f"{ep.user_id}/{attr.id}", source_turn=None)
            entries.append(ForeignEntry(ep.user_id, frozenset(lexicon.topics_in(attr.text)), rekeyed))
    return ForeignPool(entries=tuple(entries))


def _instance_rng(seed: int, ref: InstanceRef) -> np.random.Generator:
    key = [
        seed,
        zlib.crc32(ref.dataset_id.encode()),
        zlib.crc32(ref.episode_id.encode()),
        ref.session_index,
        ref.turn_index,
    ]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def _session_grounded_ids(episode: Episode, session_index: int) -> set[str]:
    out: set[str] = set()
    for turn in episode.sessions[session_index].turns:
        out.update(turn.grounded_persona_ids)
    return out


def _context_topics(episode: Episode, ref: InstanceRef, lexicon: TopicLexicon) -> set[str]:
    turns = episode.sessions[ref.session_index].turns[: ref.turn_index]
    last_user = [t for t in turns if t.speaker == USER][-2:]
    topics: set[str] = set()
    for t in last_user:
        topics |= lexicon.topics_in(t.text)
    return topics


def _draw_foreign(
    rng: np.random.Generator,
    foreign: ForeignPool,
    user_id: str,
    excluded_topics: set[str],
    taken_ids: set[str],
    n: int,
) -> list[PersonaAttribute]:
    """Sample n eligible cross-user attributes.

    Rejection sampling over the flat pool keeps this O(n) in the common case;
    a single exact filtered scan decides success when rejections pile up.
    """
    picked: list[PersonaAttribute] = []
    if n == 0:
        return picked
    if not foreign.entries:
        raise InsufficientNegatives(f"no cross-user attributes available (need {n})")

    def eligible(entry: ForeignEntry) -> bool:
        return (
            entry.owner != user_id
            and not (entry.topics & excluded_topics)
            and entry.attribute.id not in taken_ids
        )

    budget = 50 * n + 100
    while len(picked) < n and budget > 0:
        budget -= 1
        entry = foreign.entries[int(rng.integers(len(foreign.entries)))]
        if eligible(entry):
            picked.append(entry.attribute)
            taken_ids.add(entry.attribute.id)
    if len(picked) < n:
        remaining = [e.attribute for e in foreign.entries if eligible(e)]
        short = n - len(picked)
        if len(remaining) < short:
            raise InsufficientNegatives(
                f"need {short} more cross-user negatives, only {len(remaining)} eligible"
            )
        idx = rng.choice(len(remaining), size=short, replace=False)
        for i in sorted(int(i) for i in idx):
            picked.append(remaining[i])
            taken_ids.add(remaining[i].id)
    return picked


def _fill_negatives(
    rng: np.random.Generator,
    own_candidates: list[PersonaAttribute],
    need: int,
    cfg: AugmentConfig,
    foreign: ForeignPool,
    user_id: str,
    excluded_topics: set[str],
    taken_ids: set[str],
) -> list[PersonaAttribute]:
    if need == 0:
        return []
    if cfg.negative_source == OTHER_USER:
        own_take = 0
    elif cfg.negative_source == MIXED:
        own_take = min(need // 2, len(own_candidates))
    else:
        own_take = min(need, len(own_candidates))

    negatives: list[PersonaAttribute] = []
    if own_take:
        idx = rng.choice(len(own_candidates), size=own_take, replace=False)
        for i in sorted(int(i) for i in idx):
            negatives.append(own_candidates[i])
            taken_ids.add(own_candidates[i].id)
    negatives.extend(
        _draw_foreign(rng, foreign, user_id, excluded_topics, taken_ids, need - own_take)
    )
    return negatives


def _turn_at(episode: Episode, ref: InstanceRef) -> Turn:
    try:
        return episode.sessions[ref.session_index].turns[ref.turn_index]
    except IndexError as exc:
        raise AugmentError(f"instance {ref} does not resolve against episode {episode.user_id}") from exc


def augment_pr(
    ref: InstanceRef,
    episode: Episode,
    cfg: AugmentConfig,
    foreign: ForeignPool = ForeignPool(),
    lexicon: TopicLexicon | None = None,
) -> PersonaSubset:
    """Ground truth attribute(s) plus sampled negatives, order shuffled."""
    turn = _turn_at(episode, ref)
    if turn.rtl != PRTL or not turn.grounded_persona_ids:
        raise AugmentError(f"{ref} is not a personalized (PRTL) instance")
    positives = [episode.attribute(pid) for pid in turn.grounded_persona_ids]
    if len(positives) > cfg.k:
        raise AugmentError(f"{len(positives)} positives cannot fit in a subset of size k={cfg.k}")

    rng = _instance_rng(cfg.rng_seed, ref)
    grounded = _session_grounded_ids(episode, ref.session_index)
    taken = {a.id for a in positives}
    own = [a for a in episode.persona_pool if a.id not in grounded and a.id not in taken]
    negatives = _fill_negatives(
        rng, own, cfg.k - len(positives), cfg, foreign, episode.user_id, set(), taken
    )
    members = positives + negatives
    order = rng.permutation(len(members))
    return PersonaSubset(
        attributes=tuple(members[i] for i in order),
        positive_ids=tuple(a.id for a in positives),
        kind=PR,
    )


def augment_npr(
    ref: InstanceRef,
    episode: Episode,
    cfg: AugmentConfig,
    foreign: ForeignPool = ForeignPool(),
    lexicon: TopicLexicon | None = None,
) -> PersonaSubset:
    """k irrelevant attributes: unused this session, topic-disjoint from the
    last two user turns of the context."""
    turn = _turn_at(episode, ref)
    if turn.rtl == PRTL:
        raise AugmentError(f"{ref} is a personalized instance, not NPR")
    if lexicon is None:
        raise AugmentError("augment_npr requires a topic lexicon")

    rng = _instance_rng(cfg.rng_seed, ref)
    grounded = _session_grounded_ids(episode, ref.session_index)
    excluded = _context_topics(episode, ref, lexicon)
    taken: set[str] = set()
    own = [
        a
        for a in episode.persona_pool
        if a.id not in grounded and not (lexicon.topics_in(a.text) & excluded)
    ]
    negatives = _fill_negatives(rng, own, cfg.k, cfg, foreign, episode.user_id, excluded, taken)
    order = rng.permutation(len(negatives))
    return PersonaSubset(
        attributes=tuple(negatives[i] for i in order),
        positive_ids=(),
        kind=NPR,
    )


def augment_casual(ref: InstanceRef) -> PersonaSubset:
    return PersonaSubset(attributes=(), positive_ids=(), kind=CASUAL)


def augment_instance(
    ref: InstanceRef,
    episode: Episode | None,
    dataset_is_casual: bool,
    cfg: AugmentConfig,
    foreign: ForeignPool = ForeignPool(),
    lexicon: TopicLexicon | None = None,
) -> PersonaSubset:
    """Dispatch on the three-way rule."""
    if dataset_is_casual:
        return augment_casual(ref)
    if episode is None:
        raise AugmentError(f"non-casual instance {ref} needs its episode")
    turn = _turn_at(episode, ref)
    if kind_for_turn(False, turn.rtl) == PR:
        return augment_pr(ref, episode, cfg, foreign, lexicon)
    return augment_npr(ref, episode, cfg, foreign, lexicon)
