"""Synthetic multi-session dialogue generator.

Produces two corpus families from the template bank:

- an annotated personalized corpus (personalized agent turns capped at two
  per session, persona introductions mid-conversation, distractor mentions
  that must not be grounded), and
- casual corpora in three flavors (daily / knowledge / empathy) whose agent
  turns are all casual and whose persona pools are empty.

Output is deterministic given (config, template bank bytes). Episodes draw
from independent RNG streams keyed by (seed, corpus kind, episode index), so
parallel and serial generation agree byte for byte.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from .corpus import (
    AGENT,
    CRTL,
    DEFAULT_AGE_BANDS,
    DEFAULT_GENDERS,
    MAX_PR_PER_SESSION,
    PRTL,
    USER,
    Demographics,
    Episode,
    PersonaAttribute,
    Session,
    Turn,
    validate_episode,
)
from .templates import CASUAL_FLAVORS, TemplateBank, load_template_bank

MSPD_KIND = "mspd"
GENERATOR_KINDS = (MSPD_KIND,) + CASUAL_FLAVORS


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the synthetic generator.

    `personas_per_episode` bounds the initial pool size; introductions add
    roughly two more attributes per episode at the default `p_intro`, putting
    the total pool near seven. `p_two_pr` sets the share of sessions with two
    personalized responses (the rest get one), so the per-session average
    lands at 1.9 by default.
    """

    n_episodes: int
    sessions_per_episode: int = 4
    turns_per_session: tuple[int, int] = (10, 12)
    personas_per_episode: tuple[int, int] = (4, 6)
    max_pr_per_session: int = 2
    p_two_pr: float = 0.9
    p_intro: float = 0.15
    p_distract: float = 0.2
    p_hard: float = 0.8
    template_bank_path: str | None = None
    seed: int = 0

    def validated(self) -> "GeneratorConfig":
        lo, hi = self.turns_per_session
        if not (1 <= lo <= hi):
            raise ValueError(f"bad turns_per_session range {self.turns_per_session}")
        plo, phi = self.personas_per_episode
        if not (1 <= plo <= phi):
            raise ValueError(f"bad personas_per_episode range {self.personas_per_episode}")
        if not 0 <= self.max_pr_per_session <= MAX_PR_PER_SESSION:
            raise ValueError(
                f"max_pr_per_session must be 0-{MAX_PR_PER_SESSION} to satisfy the session schema cap"
            )
        if self.n_episodes < 0:
            raise ValueError("n_episodes must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        return self


def _episode_rng(seed: int, kind: str, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, zlib.crc32(kind.encode()), index])))


def _pick(rng: np.random.Generator, items):
    return items[int(rng.integers(len(items)))]


def _demographics(rng: np.random.Generator) -> Demographics:
    return Demographics(gender=_pick(rng, DEFAULT_GENDERS), age_band=_pick(rng, DEFAULT_AGE_BANDS))


class _PoolBuilder:
    """Tracks the episode persona pool while sessions are being written."""

    def __init__(self, bank: TemplateBank, rng: np.random.Generator):
        self.bank = bank
        self.rng = rng
        self.attrs: list[PersonaAttribute] = []
        self.used_topics: set[str] = set()
        self.topic_of: dict[str, str] = {}
        self.deflected: set[tuple[str, str]] = set()

    def free_topics(self) -> list[str]:
        return [t for t in self.bank.topics if t not in self.used_topics]

    def add(self, source_turn: tuple[int, int] | None) -> PersonaAttribute:
        topic = _pick(self.rng, self.free_topics())
        # never introduce a value the episode already deflected: the earlier
        # "not my thing" response must stay truthful for the whole episode
        values = [v for v in self.bank.topic_values(topic) if (topic, v) not in self.deflected]
        value = _pick(self.rng, values or self.bank.topic_values(topic))
        tpl_idx = int(self.rng.integers(len(self.bank.persona_templates)))
        text = self.bank.persona_templates[tpl_idx].format(topic=topic, value=value)
        attr = PersonaAttribute(id=f"p{len(self.attrs)}", text=text, source_turn=source_turn)
        self.attrs.append(attr)
        self.used_topics.add(topic)
        self.topic_of[attr.id] = topic
        return attr

    def value_of(self, attr: PersonaAttribute) -> tuple[str, str]:
        topic = self.topic_of[attr.id]
        for v in self.bank.topic_values(topic):
            if v in attr.text.split():
                return topic, v
        raise AssertionError(f"attribute {attr.id} lost its value word")

    def distractor_pairs(self) -> list[tuple[str, str]]:
        """(topic, value) cues that look persona-like but contradict nothing.

        Every pair except the user's actual attributes qualifies, which mixes
        easy negatives (foreign topics) with hard ones (an owned topic under
        a different value). Chosen distractors are recorded so a later
        introduction cannot adopt the same value and retroactively falsify
        the deflection.
        """
        owned = {self.value_of(attr) for attr in self.attrs}
        return [
            (topic, value)
            for topic, value in self.bank.all_topic_value_pairs()
            if (topic, value) not in owned
        ]

    def mark_deflected(self, topic: str, value: str) -> None:
        self.deflected.add((topic, value))


def _casual_pair(bank: TemplateBank, rng: np.random.Generator, flavor: str | None = None) -> tuple[Turn, Turn]:
    flavor = flavor or _pick(rng, CASUAL_FLAVORS)
    idx = int(rng.integers(len(bank.casual_exchanges[flavor])))
    u_text, a_text = bank.casual_exchanges[flavor][idx]
    return (
        Turn(speaker=USER, text=u_text, template_id=f"casual.{flavor}.{idx}.u"),
        Turn(speaker=AGENT, text=a_text, rtl=CRTL, template_id=f"casual.{flavor}.{idx}.a"),
    )


def _mspd_session(bank: TemplateBank, rng, pool: _PoolBuilder, cfg: GeneratorConfig, s_idx: int) -> Session:
    n_turns = int(rng.integers(cfg.turns_per_session[0], cfg.turns_per_session[1] + 1))
    agent_positions = [i for i in range(n_turns) if i % 2 == 1]
    n_pr = 0
    if cfg.max_pr_per_session >= 1 and agent_positions:
        n_pr = 2 if (cfg.max_pr_per_session >= 2 and rng.random() < cfg.p_two_pr) else 1
    n_pr = min(n_pr, len(agent_positions))
    pr_slots = set(int(x) for x in rng.choice(agent_positions, size=n_pr, replace=False)) if n_pr else set()

    turns: list[Turn] = []
    grounded_this_session: set[str] = set()
    t = 0
    while t < n_turns:
        agent_idx = t + 1
        if agent_idx < n_turns and agent_idx in pr_slots:
            candidates = [a for a in pool.attrs if a.id not in grounded_this_session]
            if not candidates:
                candidates = pool.attrs
            attr = _pick(rng, candidates)
            topic, value = pool.value_of(attr)
            cue_idx = int(rng.integers(len(bank.cue_templates)))
            turns.append(
                Turn(
                    speaker=USER,
                    text=bank.cue_templates[cue_idx].format(value=value),
                    template_id=f"cue.{cue_idx}",
                )
            )
            hard = rng.random() < cfg.p_hard
            variants = bank.hard_templates(topic) if hard else bank.soft_templates(topic)
            r_idx = int(rng.integers(len(variants)))
            style = "hard" if hard else "soft"
            turns.append(
                Turn(
                    speaker=AGENT,
                    text=variants[r_idx].format(topic=topic, value=value),
                    rtl=PRTL,
                    grounded_persona_ids=[attr.id],
                    template_id=f"resp.{style}.{topic}.{r_idx}",
                )
            )
            grounded_this_session.add(attr.id)
            t += 2
            continue

        roll = rng.random()
        if roll < cfg.p_intro and pool.free_topics():
            attr = pool.add(source_turn=(s_idx, t))
            topic, value = pool.value_of(attr)
            i_idx = int(rng.integers(len(bank.intro_templates)))
            turns.append(
                Turn(
                    speaker=USER,
                    text=bank.intro_templates[i_idx].format(topic=topic, value=value),
                    introduces_persona_ids=[attr.id],
                    template_id=f"intro.{i_idx}",
                )
            )
            if agent_idx < n_turns:
                a_idx = int(rng.integers(len(bank.intro_ack_templates)))
                turns.append(
                    Turn(
                        speaker=AGENT,
                        text=bank.intro_ack_templates[a_idx],
                        rtl=CRTL,
                        template_id=f"ack.{a_idx}",
                    )
                )
        elif roll < cfg.p_intro + cfg.p_distract and pool.distractor_pairs():
            topic, value = _pick(rng, pool.distractor_pairs())
            pool.mark_deflected(topic, value)
            c_idx = int(rng.integers(len(bank.cue_templates)))
            turns.append(
                Turn(
                    speaker=USER,
                    text=bank.cue_templates[c_idx].format(value=value),
                    template_id=f"distract.{c_idx}",
                )
            )
            if agent_idx < n_turns:
                d_idx = int(rng.integers(len(bank.deflect_templates)))
                turns.append(
                    Turn(
                        speaker=AGENT,
                        text=bank.deflect_templates[d_idx],
                        rtl=CRTL,
                        template_id=f"deflect.{d_idx}",
                    )
                )
        else:
            u_turn, a_turn = _casual_pair(bank, rng)
            turns.append(u_turn)
            if agent_idx < n_turns:
                turns.append(a_turn)
        t += 2
    return Session(turns=turns)


def generate_mspd(cfg: GeneratorConfig, bank: TemplateBank | None = None) -> list[Episode]:
    """Generate the annotated personalized corpus."""
    cfg = cfg.validated()
    bank = bank or load_template_bank(cfg.template_bank_path)
    episodes = []
    for ep_idx in range(cfg.n_episodes):
        rng = _episode_rng(cfg.seed, MSPD_KIND, ep_idx)
        demo = _demographics(rng)
        pool = _PoolBuilder(bank, rng)
        n_init = int(rng.integers(cfg.personas_per_episode[0], cfg.personas_per_episode[1] + 1))
        for _ in range(min(n_init, len(bank.topics))):
            pool.add(source_turn=None)
        sessions = [_mspd_session(bank, rng, pool, cfg, s_idx) for s_idx in range(cfg.sessions_per_episode)]
        episode = Episode(
            user_id=f"{MSPD_KIND}-{ep_idx:05d}",
            demographics=demo,
            persona_pool=pool.attrs,
            sessions=sessions,
        )
        violations = validate_episode(episode)
        if violations:
            raise AssertionError(f"generator produced invalid episode: {violations[0]}")
        episodes.append(episode)
    return episodes


def generate_casual(cfg: GeneratorConfig, flavor: str, bank: TemplateBank | None = None) -> list[Episode]:
    """Generate a casual corpus of a single flavor; agent turns are all CRTL."""
    cfg = cfg.validated()
    if flavor not in CASUAL_FLAVORS:
        raise ValueError(f"unknown casual flavor {flavor!r}; expected one of {CASUAL_FLAVORS}")
    bank = bank or load_template_bank(cfg.template_bank_path)
    episodes = []
    for ep_idx in range(cfg.n_episodes):
        rng = _episode_rng(cfg.seed, flavor, ep_idx)
        demo = _demographics(rng)
        sessions = []
        for _ in range(cfg.sessions_per_episode):
            n_turns = int(rng.integers(cfg.turns_per_session[0], cfg.turns_per_session[1] + 1))
            turns: list[Turn] = []
            t = 0
            while t < n_turns:
                u_turn, a_turn = _casual_pair(bank, rng, flavor)
                turns.append(u_turn)
                if t + 1 < n_turns:
                    turns.append(a_turn)
                t += 2
            sessions.append(Session(turns=turns))
        episode = Episode(
            user_id=f"{flavor}-{ep_idx:05d}",
            demographics=demo,
            persona_pool=[],
            sessions=sessions,
        )
        violations = validate_episode(episode)
        if violations:
            raise AssertionError(f"generator produced invalid episode: {violations[0]}")
        episodes.append(episode)
    return episodes


def generate(cfg: GeneratorConfig, kind: str, bank: TemplateBank | None = None) -> list[Episode]:
    if kind == MSPD_KIND:
        return generate_mspd(cfg, bank)
    return generate_casual(cfg, kind, bank)
