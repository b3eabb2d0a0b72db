"""Chat service: journaled session store, engine, and HTTP app."""

from .engine import (
    BadRequest,
    ChatEngine,
    GenerationFailed,
    ServiceError,
    TurnResult,
    UnknownAttribute,
    UnknownSession,
    UnknownUser,
)
from .store import JournalStore, StoreError

__all__ = [
    "BadRequest",
    "ChatEngine",
    "GenerationFailed",
    "JournalStore",
    "ServiceError",
    "StoreError",
    "TurnResult",
    "UnknownAttribute",
    "UnknownSession",
    "UnknownUser",
]
