"""Canonical schema for multi-session personalized dialogue corpora.

An Episode is one user's full history: demographics, a persona pool, and an
ordered list of sessions. Agent turns carry a response type label (PRTL for
persona-grounded turns, CRTL for casual ones) plus the ids of the persona
attributes they ground. User turns may introduce new persona attributes.

On disk a corpus is JSONL: a header record declaring the demographic
enumerations, then one episode record per line (see docs/FORMATS.md).
All operations here are read-only over their inputs and safe to call from
concurrent threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

USER = "USER"
AGENT = "AGENT"
PRTL = "PRTL"
CRTL = "CRTL"

SPEAKERS = (USER, AGENT)
RTLS = (PRTL, CRTL)
CONSISTENCY_VALUES = ("CONSISTENT", "INCONSISTENT")

DEFAULT_GENDERS = ("female", "male", "nonbinary")
DEFAULT_AGE_BANDS = ("10s", "20s", "30s", "40s", "50s", "60s")

MAX_PR_PER_SESSION = 2
SESSION_TURNS_MIN = 10
SESSION_TURNS_MAX = 12


class CorpusError(Exception):
    """Unreadable or malformed corpus file."""


class SchemaViolation(CorpusError):
    """An episode failed schema validation at load time."""


@dataclass(frozen=True)
class Demographics:
    gender: str
    age_band: str


@dataclass(frozen=True)
class PersonaAttribute:
    """One natural-language statement about the user.

    `source_turn` is (session_index, turn_index) when the attribute was
    introduced mid-conversation; None for attributes present from the start.
    """

    id: str
    text: str
    source_turn: tuple[int, int] | None = None


@dataclass
class Turn:
    speaker: str
    text: str
    rtl: str | None = None
    grounded_persona_ids: list[str] = field(default_factory=list)
    introduces_persona_ids: list[str] = field(default_factory=list)
    consistency_annotation: str | None = None
    template_id: str | None = None


@dataclass
class Session:
    turns: list[Turn]


@dataclass
class Episode:
    user_id: str
    demographics: Demographics
    persona_pool: list[PersonaAttribute]
    sessions: list[Session]

    def attribute(self, attr_id: str) -> PersonaAttribute:
        for attr in self.persona_pool:
            if attr.id == attr_id:
                return attr
        raise KeyError(attr_id)


@dataclass(frozen=True)
class CorpusHeader:
    genders: tuple[str, ...] = DEFAULT_GENDERS
    age_bands: tuple[str, ...] = DEFAULT_AGE_BANDS


@dataclass
class DialogueContext:
    """Alternating turn prefix ending on the user's latest utterance."""

    turns: list[Turn]

    def __post_init__(self):
        if self.turns and self.turns[-1].speaker != USER:
            raise ValueError("dialogue context must end with a USER turn")


# ---------------------------------------------------------------------------
# Validation


@dataclass
class Violation:
    episode_id: str
    location: str
    message: str

    def __str__(self):
        return f"{self.episode_id} {self.location}: {self.message}"


def validate_episode(episode: Episode, header: CorpusHeader | None = None) -> list[Violation]:
    """Check every schema invariant; an empty list means the episode is valid."""
    header = header or CorpusHeader()
    out: list[Violation] = []
    eid = episode.user_id

    def bad(location, message):
        out.append(Violation(eid, location, message))

    if episode.demographics.gender not in header.genders:
        bad("demographics", f"gender {episode.demographics.gender!r} not in corpus enumeration")
    if episode.demographics.age_band not in header.age_bands:
        bad("demographics", f"age_band {episode.demographics.age_band!r} not in corpus enumeration")

    pool_ids = [a.id for a in episode.persona_pool]
    if len(set(pool_ids)) != len(pool_ids):
        bad("persona_pool", "attribute ids must be unique per user")
    known = set(pool_ids)
    for attr in episode.persona_pool:
        if not attr.text:
            bad(f"persona_pool[{attr.id}]", "attribute text is empty")

    introduced_at: dict[str, tuple[int, int]] = {}
    for s_idx, session in enumerate(episode.sessions):
        loc = f"session[{s_idx}]"
        n = len(session.turns)
        if not SESSION_TURNS_MIN <= n <= SESSION_TURNS_MAX:
            bad(loc, f"session has {n} turns, expected {SESSION_TURNS_MIN}-{SESSION_TURNS_MAX}")
        pr_count = 0
        for t_idx, turn in enumerate(session.turns):
            tloc = f"{loc}.turn[{t_idx}]"
            expected = USER if t_idx % 2 == 0 else AGENT
            if turn.speaker not in SPEAKERS:
                bad(tloc, f"unknown speaker {turn.speaker!r}")
            elif turn.speaker != expected:
                bad(tloc, f"speakers must alternate starting with USER; expected {expected}")
            if not turn.text:
                bad(tloc, "turn text is empty")
            if turn.consistency_annotation is not None and turn.consistency_annotation not in CONSISTENCY_VALUES:
                bad(tloc, f"unknown consistency annotation {turn.consistency_annotation!r}")

            if turn.speaker == USER:
                if turn.rtl is not None:
                    bad(tloc, "USER turns carry no rtl")
                if turn.grounded_persona_ids:
                    bad(tloc, "USER turns carry no grounded_persona_ids")
                for pid in turn.introduces_persona_ids:
                    if pid not in known:
                        bad(tloc, f"introduced persona {pid!r} absent from persona_pool")
                    else:
                        introduced_at[pid] = (s_idx, t_idx)
            else:
                if turn.introduces_persona_ids:
                    bad(tloc, "AGENT turns cannot introduce personas")
                if turn.rtl not in RTLS:
                    bad(tloc, f"AGENT turn rtl must be one of {RTLS}, got {turn.rtl!r}")
                elif turn.rtl == PRTL:
                    pr_count += 1
                    if not turn.grounded_persona_ids:
                        bad(tloc, "PRTL requires grounding ids")
                elif turn.grounded_persona_ids:
                    bad(tloc, "CRTL turns cannot carry grounded_persona_ids")
                for pid in turn.grounded_persona_ids:
                    if pid not in known:
                        bad(tloc, f"dangling persona reference {pid!r}")
        if pr_count > MAX_PR_PER_SESSION:
            bad(loc, f"{pr_count} PRTL turns exceed the cap of {MAX_PR_PER_SESSION} personalized responses per session")

    for attr in episode.persona_pool:
        if attr.source_turn is not None:
            if introduced_at.get(attr.id) != tuple(attr.source_turn):
                bad(
                    f"persona_pool[{attr.id}]",
                    f"source_turn {tuple(attr.source_turn)} not matched by introduces_persona_ids at that turn",
                )
    return out


# ---------------------------------------------------------------------------
# JSONL serialization

_HEADER_RECORD = "header"
_EPISODE_RECORD = "episode"


def _turn_to_obj(turn: Turn) -> dict:
    obj: dict = {"speaker": turn.speaker, "text": turn.text}
    if turn.rtl is not None:
        obj["rtl"] = turn.rtl
    if turn.grounded_persona_ids:
        obj["grounded_persona_ids"] = list(turn.grounded_persona_ids)
    if turn.introduces_persona_ids:
        obj["introduces_persona_ids"] = list(turn.introduces_persona_ids)
    if turn.consistency_annotation is not None:
        obj["consistency_annotation"] = turn.consistency_annotation
    if turn.template_id is not None:
        obj["template_id"] = turn.template_id
    return obj


def _turn_from_obj(obj: dict) -> Turn:
    return Turn(
        speaker=obj["speaker"],
        text=obj["text"],
        rtl=obj.get("rtl"),
        grounded_persona_ids=list(obj.get("grounded_persona_ids", [])),
        introduces_persona_ids=list(obj.get("introduces_persona_ids", [])),
        consistency_annotation=obj.get("consistency_annotation"),
        template_id=obj.get("template_id"),
    )


def episode_to_obj(episode: Episode) -> dict:
    pool = []
    for attr in episode.persona_pool:
        a: dict = {"id": attr.id, "text": attr.text}
        if attr.source_turn is not None:
            a["source_turn"] = list(attr.source_turn)
        pool.append(a)
    return {
        "record": _EPISODE_RECORD,
        "user_id": episode.user_id,
        "demographics": {"gender": episode.demographics.gender, "age_band": episode.demographics.age_band},
        "persona_pool": pool,
        "sessions": [{"turns": [_turn_to_obj(t) for t in s.turns]} for s in episode.sessions],
    }


def episode_from_obj(obj: dict) -> Episode:
    demo = obj["demographics"]
    pool = [
        PersonaAttribute(
            id=a["id"],
            text=a["text"],
            source_turn=tuple(a["source_turn"]) if a.get("source_turn") is not None else None,
        )
        for a in obj["persona_pool"]
    ]
    sessions = [Session(turns=[_turn_from_obj(t) for t in s["turns"]]) for s in obj["sessions"]]
    return Episode(
        user_id=obj["user_id"],
        demographics=Demographics(gender=demo["gender"], age_band=demo["age_band"]),
        persona_pool=pool,
        sessions=sessions,
    )


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=False)


def save_corpus(episodes: list[Episode], path, header: CorpusHeader | None = None):
    """Write a corpus in canonical JSONL form (stable key order, no spaces)."""
    header = header or CorpusHeader()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            _dumps(
                {
                    "record": _HEADER_RECORD,
                    "genders": list(header.genders),
                    "age_bands": list(header.age_bands),
                }
            )
            + "\n"
        )
        for ep in episodes:
            fh.write(_dumps(episode_to_obj(ep)) + "\n")


def load_corpus(path, validate: bool = True) -> list[Episode]:
    """Read a JSONL corpus, validating every episode.

    Raises CorpusError with the offending line number for malformed records,
    and SchemaViolation naming episode + invariant for invalid episodes.
    """
    episodes, header = load_corpus_with_header(path, validate=validate)
    return episodes


def load_corpus_with_header(path, validate: bool = True) -> tuple[list[Episode], CorpusHeader]:
    episodes: list[Episode] = []
    header = CorpusHeader()
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot open corpus {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record: {exc}") from exc
            kind = obj.get("record")
            if kind == _HEADER_RECORD:
                header = CorpusHeader(
                    genders=tuple(obj.get("genders", DEFAULT_GENDERS)),
                    age_bands=tuple(obj.get("age_bands", DEFAULT_AGE_BANDS)),
                )
                continue
            if kind != _EPISODE_RECORD:
                raise CorpusError(f"{path}:{lineno}: unknown record type {kind!r}")
            try:
                episode = episode_from_obj(obj)
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed episode record: {exc!r}") from exc
            if validate:
                violations = validate_episode(episode, header)
                if violations:
                    raise SchemaViolation(
                        f"{path}:{lineno}: episode {episode.user_id} violates schema: "
                        + "; ".join(str(v) for v in violations)
                    )
            episodes.append(episode)
    return episodes, header


# ---------------------------------------------------------------------------
# Statistics


@dataclass
class CorpusStats:
    n_episodes: int
    n_sessions: int
    n_utterances: int
    avg_turns_per_session: float
    avg_personalized_per_session: float
    avg_personas_per_episode: float
    avg_new_personas_per_episode: float
    avg_user_utterance_len: float
    avg_agent_utterance_len: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def corpus_stats(episodes: list[Episode]) -> CorpusStats:
    """Corpus-level counts and averages. Utterance lengths are in characters."""
    if not episodes:
        raise ValueError("corpus_stats requires a non-empty corpus")
    n_sessions = 0
    n_utterances = 0
    n_pr = 0
    n_personas = 0
    n_new = 0
    user_chars: list[int] = []
    agent_chars: list[int] = []
    for ep in episodes:
        n_personas += len(ep.persona_pool)
        n_new += sum(1 for a in ep.persona_pool if a.source_turn is not None)
        for session in ep.sessions:
            n_sessions += 1
            n_utterances += len(session.turns)
            for turn in session.turns:
                if turn.speaker == USER:
                    user_chars.append(len(turn.text))
                else:
                    agent_chars.append(len(turn.text))
                    if turn.rtl == PRTL:
                        n_pr += 1
    return CorpusStats(
        n_episodes=len(episodes),
        n_sessions=n_sessions,
        n_utterances=n_utterances,
        avg_turns_per_session=n_utterances / n_sessions if n_sessions else 0.0,
        avg_personalized_per_session=n_pr / n_sessions if n_sessions else 0.0,
        avg_personas_per_episode=n_personas / len(episodes),
        avg_new_personas_per_episode=n_new / len(episodes),
        avg_user_utterance_len=sum(user_chars) / len(user_chars) if user_chars else 0.0,
        avg_agent_utterance_len=sum(agent_chars) / len(agent_chars) if agent_chars else 0.0,
    )
