"""Desk-scale personalized dialogue stack.

The package covers the full loop: synthetic multi-session corpora with
per-turn persona annotations, instance-level weighted dataset blending,
negative persona augmentation, a tiny from-scratch language model with
response-type-label (RTL) control tokens, an evaluation suite, lexical
persona retrieval, and an HTTP chat service with a sanity-testing UI.
"""

__version__ = "0.1.0"

from .corpus import (
    Demographics,
    DialogueContext,
    Episode,
    PersonaAttribute,
    Session,
    Turn,
    corpus_stats,
    load_corpus,
    save_corpus,
    validate_episode,
)

__all__ = [
    "Demographics",
    "DialogueContext",
    "Episode",
    "PersonaAttribute",
    "Session",
    "Turn",
    "corpus_stats",
    "load_corpus",
    "save_corpus",
    "validate_episode",
]
