"""Chat engine: per-user persona pools, per-session dialogue state, retrieval,
generation, diagnostics, and a journal that makes all of it replayable.

Concurrency: the model checkpoint is shared read-only; each session's turns
are strictly serialized by a per-session lock; persona mutation and retrieval
for one user are linearized by a per-user lock. The registry lock guards only
dictionary lookups/inserts and is never held while acquiring a session or
user lock; session locks may nest a user lock but never another session's —
so there is no cycle and no deadlock.

Consistency: the user turn is appended before generation and rolled back if
generation fails, so a failed turn never leaves the context dangling; the
journal is written only after the full turn succeeds.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

from ..corpus import (
    AGENT,
    CRTL,
    DEFAULT_AGE_BANDS,
    DEFAULT_GENDERS,
    PRTL,
    USER,
    Demographics,
    PersonaAttribute,
    Turn,
)
from ..evaluation import GroundingJudgment, classify_grounding, p_cover, persona_f1
from ..model import Checkpoint, DecodeConfig, generate
from ..retrieval import PersonaIndex, RankedAttribute, as_subset, query_from_turns
from .store import JournalStore

DEFAULT_DEMOGRAPHICS = Demographics(gender=DEFAULT_GENDERS[0], age_band=DEFAULT_AGE_BANDS[1])


class ServiceError(Exception):
    """Base class for engine failures; the HTTP layer maps subtypes to codes."""


class UnknownSession(ServiceError):
    pass


class UnknownUser(ServiceError):
    pass


class UnknownAttribute(ServiceError):
    pass


class BadRequest(ServiceError):
    pass


class GenerationFailed(ServiceError):
    """Generation raised; the session was left exactly as before the call."""


@dataclass(frozen=True)
class TurnResult:
    """Everything one message round produced."""

    session_id: str
    response: str
    rtl: str | None
    retrieved: tuple[RankedAttribute, ...]
    f1: float
    cover: float
    grounding: GroundingJudgment

    def as_obj(self) -> dict:
        return {
            "session_id": self.session_id,
            "response": self.response,
            "rtl": self.rtl,
            "retrieved": [
                {"id": r.attribute.id, "text": r.attribute.text, "score": r.score}
                for r in self.retrieved
            ],
            "diagnostics": {
                "f1": self.f1,
                "p_cover": self.cover,
                "grounding": {
                    "level": self.grounding.level,
                    "similarity": self.grounding.similarity,
                    "matched_id": self.grounding.matched_persona_id,
                },
            },
        }


@dataclass
class _UserState:
    user_id: str
    demographics: Demographics
    index: PersonaIndex
    lock: threading.Lock = field(default_factory=threading.Lock)
    attr_seq: int = 0


@dataclass
class _SessionState:
    session_id: str
    user_id: str
    turns: list[Turn] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class ChatEngine:
    """Serves chat sessions over one frozen checkpoint.

    Every state change (user creation, session creation, persona mutation,
    completed turn) is journaled; `ChatEngine(checkpoint, store)` replays the
    journal on construction, so restarting on the same store restores every
    pool, context, and log exactly.
    """

    def __init__(
        self,
        checkpoint: Checkpoint,
        store: JournalStore | None = None,
        decode: DecodeConfig = DecodeConfig(),
        top_k: int = 5,
    ):
        self.checkpoint = checkpoint
        self.store = store
        self.decode = decode
        self.top_k = top_k
        self._registry = threading.Lock()
        self._users: dict[str, _UserState] = {}
        self._sessions: dict[str, _SessionState] = {}
        if store is not None:
            self._replay(store.records())

    # -- journal replay ------------------------------------------------------

    def _replay(self, records: list[dict]) -> None:
        for rec in records:
            kind = rec.get("record")
            if kind == "user":
                demo = rec.get("demographics") or {}
                self._users[rec["user_id"]] = _UserState(
                    user_id=rec["user_id"],
                    demographics=Demographics(
                        gender=demo.get("gender", DEFAULT_DEMOGRAPHICS.gender),
                        age_band=demo.get("age_band", DEFAULT_DEMOGRAPHICS.age_band),
                    ),
                    index=PersonaIndex(top_k=self.top_k),
                )
            elif kind == "session":
                self._sessions[rec["session_id"]] = _SessionState(
                    session_id=rec["session_id"], user_id=rec["user_id"]
                )
            elif kind == "persona_add":
                user = self._users[rec["user_id"]]
                user.index.add(PersonaAttribute(id=rec["id"], text=rec["text"]))
                user.attr_seq = max(user.attr_seq, _seq_of(rec["id"]) + 1)
            elif kind == "persona_delete":
                self._users[rec["user_id"]].index.remove(rec["id"])
            elif kind == "turn":
                session = self._sessions[rec["session_id"]]
                session.turns.append(Turn(speaker=USER, text=rec["user_text"]))
                session.turns.append(
                    Turn(speaker=AGENT, text=rec["result"]["response"], rtl=rec["result"]["rtl"])
                )
                session.log.append(rec)
            # unknown record kinds are ignored: forward compatibility

    # -- users and personas ----------------------------------------------------

    def _ensure_user(self, user_id: str, demographics: Demographics | None = None) -> _UserState:
        """Find or lazily create a user (journaling the creation)."""
        if not user_id or not user_id.strip():
            raise BadRequest("user_id must be non-empty")
        with self._registry:
            state = self._users.get(user_id)
            if state is None:
                demo = demographics or DEFAULT_DEMOGRAPHICS
                state = _UserState(
                    user_id=user_id, demographics=demo, index=PersonaIndex(top_k=self.top_k)
                )
                self._users[user_id] = state
                self._journal(
                    {
                        "record": "user",
                        "user_id": user_id,
                        "demographics": {"gender": demo.gender, "age_band": demo.age_band},
                    }
                )
            return state

    def _user(self, user_id: str) -> _UserState:
        with self._registry:
            state = self._users.get(user_id)
        if state is None:
            raise UnknownUser(f"unknown user {user_id!r}")
        return state

    def list_personas(self, user_id: str) -> list[PersonaAttribute]:
        user = self._user(user_id)
        with user.lock:
            return user.index.attributes()

    def add_persona(self, user_id: str, text: str, attr_id: str | None = None) -> PersonaAttribute:
        """Add one attribute; the user is created on first add."""
        if not text or not text.strip():
            raise BadRequest("persona text must be non-empty")
        user = self._ensure_user(user_id)
        with user.lock:
            if attr_id is None:
                attr_id = f"p{user.attr_seq:03d}"
                while attr_id in user.index:
                    user.attr_seq += 1
                    attr_id = f"p{user.attr_seq:03d}"
            if attr_id in user.index:
                raise BadRequest(f"persona attribute id {attr_id!r} already exists")
            attr = PersonaAttribute(id=attr_id, text=text.strip())
            user.index.add(attr)
            user.attr_seq = max(user.attr_seq, _seq_of(attr_id) + 1)
            self._journal(
                {"record": "persona_add", "user_id": user_id, "id": attr.id, "text": attr.text}
            )
            return attr

    def delete_persona(self, user_id: str, attr_id: str) -> PersonaAttribute:
        user = self._user(user_id)
        with user.lock:
            try:
                removed = user.index.remove(attr_id)
            except ValueError as exc:
                raise UnknownAttribute(str(exc)) from exc
            self._journal({"record": "persona_delete", "user_id": user_id, "id": attr_id})
            return removed

    def retrieve(self, user_id: str, turns, top_k: int | None = None) -> list[RankedAttribute]:
        """Rank the user's pool against the last user turns of `turns`."""
        user = self._user(user_id)
        with user.lock:
            return user.index.retrieve_for_context(turns, top_k=top_k)

    # -- sessions ---------------------------------------------------------------

    def create_session(self, user_id: str, demographics: Demographics | None = None) -> str:
        """Open a session; the user is created lazily with an empty pool."""
        self._ensure_user(user_id, demographics)
        session_id = "s-" + uuid.uuid4().hex[:12]
        with self._registry:
            self._sessions[session_id] = _SessionState(session_id=session_id, user_id=user_id)
        self._journal({"record": "session", "session_id": session_id, "user_id": user_id})
        return session_id

    def _session(self, session_id: str) -> _SessionState:
        with self._registry:
            state = self._sessions.get(session_id)
        if state is None:
            raise UnknownSession(f"unknown session {session_id!r}")
        return state

    def session_log(self, session_id: str) -> list[dict]:
        session = self._session(session_id)
        with session.lock:
            return list(session.log)

    def session_user(self, session_id: str) -> str:
        return self._session(session_id).user_id

    def post_message(self, session_id: str, user_text: str, force_rtl: str | None = None) -> TurnResult:
        """One full round: append user turn, retrieve, generate, judge, journal.

        If generation raises, the user turn is rolled back and
        GenerationFailed is raised: the session is exactly as it was.
        """
        ckpt = self.checkpoint
        if not user_text or not user_text.strip():
            raise BadRequest("message text must be non-empty")
        if force_rtl is not None:
            if not ckpt.rtl_mode:
                raise BadRequest("this checkpoint has no response-type slot to force")
            if force_rtl not in (PRTL, CRTL):
                raise BadRequest(f"force_rtl must be {PRTL!r} or {CRTL!r}, got {force_rtl!r}")
        session = self._session(session_id)
        with session.lock:
            user = self._user(session.user_id)
            session.turns.append(Turn(speaker=USER, text=user_text))
            try:
                with user.lock:
                    ranked = tuple(user.index.retrieve_for_context(session.turns))
                    idf = user.index.idf
                subset = as_subset(ranked)
                result = generate(
                    ckpt.params,
                    ckpt.config,
                    ckpt.vocab,
                    user.demographics,
                    subset.texts(),
                    session.turns,
                    force_rtl=force_rtl,
                    decode=self.decode,
                    rtl_mode=ckpt.rtl_mode,
                )
                texts = subset.texts()
                f1 = persona_f1(result.text, texts)
                cover = p_cover(result.text, texts, idf)
                # Without a response-type slot every response is judged as a
                # grounding candidate, mirroring offline evaluation.
                emitted = result.rtl if result.rtl is not None else PRTL
                judged = classify_grounding(
                    result.text, [(r.attribute.id, r.attribute.text) for r in ranked], emitted
                )
            except ServiceError:
                session.turns.pop()
                raise
            except Exception as exc:
                session.turns.pop()
                raise GenerationFailed(f"generation failed: {exc}") from exc
            session.turns.append(Turn(speaker=AGENT, text=result.text, rtl=result.rtl))
            turn = TurnResult(
                session_id=session_id,
                response=result.text,
                rtl=result.rtl,
                retrieved=ranked,
                f1=f1,
                cover=cover,
                grounding=judged,
            )
            record = {
                "record": "turn",
                "session_id": session_id,
                "user_text": user_text,
                "force_rtl": force_rtl,
                "result": turn.as_obj(),
            }
            session.log.append(record)
            self._journal(record)
            return turn

    # -- misc -------------------------------------------------------------------

    def _journal(self, record: dict) -> None:
        if self.store is not None:
            self.store.append(record)

    def health(self) -> dict:
        with self._registry:
            n_users = len(self._users)
            n_sessions = len(self._sessions)
        return {
            "status": "ok",
            "vocab_size": len(self.checkpoint.vocab),
            "rtl_mode": self.checkpoint.rtl_mode,
            "users": n_users,
            "sessions": n_sessions,
        }


def _seq_of(attr_id: str) -> int:
    """Numeric suffix of auto-assigned ids, -1 for foreign id shapes."""
    if attr_id.startswith("p") and attr_id[1:].isdigit():
        return int(attr_id[1:])
    return -1
