"""Template bank loading and the topic lexicon.

The bank is a YAML file (see data/template_bank.yaml for the grammar and the
overlap contract). The topic lexicon maps every topic noun and topic value
word to its topic name; it is how "contextually irrelevant" is made auditable:
a persona attribute is topic-disjoint from a context window when their lexicon
topics do not intersect.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import yaml

from .textnorm import words

CASUAL_FLAVORS = ("daily", "knowledge", "empathy")


class TemplateBankError(Exception):
    """Missing or structurally invalid template bank."""


@dataclass(frozen=True)
class TemplateBank:
    raw_bytes: bytes
    topics: dict[str, tuple[str, ...]]
    persona_templates: tuple[str, ...]
    cue_templates: tuple[str, ...]
    intro_templates: tuple[str, ...]
    intro_ack_templates: tuple[str, ...]
    deflect_templates: tuple[str, ...]
    hard_generic: tuple[str, ...]
    soft_generic: tuple[str, ...]
    per_topic_hard: dict[str, tuple[str, ...]]
    per_topic_soft: dict[str, tuple[str, ...]]
    casual_exchanges: dict[str, tuple[tuple[str, str], ...]]

    def hard_templates(self, topic: str) -> tuple[str, ...]:
        return self.hard_generic + self.per_topic_hard.get(topic, ())

    def soft_templates(self, topic: str) -> tuple[str, ...]:
        return self.soft_generic + self.per_topic_soft.get(topic, ())

    def topic_values(self, topic: str) -> tuple[str, ...]:
        return self.topics[topic]

    def all_topic_value_pairs(self) -> list[tuple[str, str]]:
        return [(t, v) for t, vals in self.topics.items() for v in vals]


@dataclass(frozen=True)
class TopicLexicon:
    """Maps topic nouns and value words to their topic name."""

    word_to_topic: dict[str, str]

    def topics_in(self, text: str) -> set[str]:
        return {self.word_to_topic[w] for w in words(text) if w in self.word_to_topic}


def topic_lexicon(bank: TemplateBank) -> TopicLexicon:
    mapping: dict[str, str] = {}
    for topic, values in bank.topics.items():
        mapping[topic] = topic
        for v in values:
            mapping[v] = topic
    return TopicLexicon(word_to_topic=mapping)


def default_bank_path():
    return resources.files("wwh_dialogue.data").joinpath("template_bank.yaml")


def load_template_bank(path=None) -> TemplateBank:
    """Load and structurally validate a template bank.

    Raises TemplateBankError when a section is missing, a slot is absent from
    a template that requires it, or a topic lacks a hard or soft grounded
    response variant.
    """
    if path is None:
        raw = default_bank_path().read_bytes()
    else:
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise TemplateBankError(f"cannot read template bank {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise TemplateBankError(f"template bank is not valid yaml: {exc}") from exc
    if not isinstance(doc, dict):
        raise TemplateBankError("template bank must be a mapping")

    def section(name):
        if name not in doc:
            raise TemplateBankError(f"template bank missing section {name!r}")
        return doc[name]

    topics = {str(t): tuple(str(v) for v in vals) for t, vals in section("topics").items()}
    if not topics:
        raise TemplateBankError("template bank declares no topics")
    seen_values: dict[str, str] = {}
    for topic, values in topics.items():
        if not values:
            raise TemplateBankError(f"topic {topic!r} has no values")
        for v in values:
            if v in seen_values:
                raise TemplateBankError(f"value {v!r} appears under both {seen_values[v]!r} and {topic!r}")
            seen_values[v] = topic

    def template_list(name, require=("{value}",)):
        items = tuple(str(t) for t in section(name))
        if not items:
            raise TemplateBankError(f"section {name!r} is empty")
        for tpl in items:
            for slot in require:
                if slot not in tpl:
                    raise TemplateBankError(f"{name} template {tpl!r} missing {slot}")
        return items

    persona = template_list("persona_templates", require=("{topic}", "{value}"))
    cue = template_list("cue_turn_templates")
    intro = template_list("intro_turn_templates", require=("{topic}", "{value}"))
    intro_ack = template_list("intro_ack_templates", require=())
    deflect = template_list("deflect_templates", require=())

    grt = section("grounded_response_templates")
    hard_generic = tuple(str(t) for t in grt.get("hard", ()))
    soft_generic = tuple(str(t) for t in grt.get("soft", ()))
    per_topic = grt.get("per_topic", {}) or {}
    per_topic_hard = {str(t): tuple(str(x) for x in d.get("hard", ())) for t, d in per_topic.items()}
    per_topic_soft = {str(t): tuple(str(x) for x in d.get("soft", ())) for t, d in per_topic.items()}
    for extra in per_topic:
        if extra not in topics:
            raise TemplateBankError(f"per_topic responses reference unknown topic {extra!r}")

    casual_raw = section("casual_exchanges")
    casual: dict[str, tuple[tuple[str, str], ...]] = {}
    for flavor in CASUAL_FLAVORS:
        pairs = casual_raw.get(flavor)
        if not pairs:
            raise TemplateBankError(f"casual_exchanges missing flavor {flavor!r}")
        casual[flavor] = tuple((str(u), str(a)) for u, a in pairs)

    bank = TemplateBank(
        raw_bytes=raw,
        topics=topics,
        persona_templates=persona,
        cue_templates=cue,
        intro_templates=intro,
        intro_ack_templates=intro_ack,
        deflect_templates=deflect,
        hard_generic=hard_generic,
        soft_generic=soft_generic,
        per_topic_hard=per_topic_hard,
        per_topic_soft=per_topic_soft,
        casual_exchanges=casual,
    )
    for topic in topics:
        if not bank.hard_templates(topic):
            raise TemplateBankError(f"topic {topic!r} has no hard grounded-response template")
        if not bank.soft_templates(topic):
            raise TemplateBankError(f"topic {topic!r} has no soft grounded-response template")
        for tpl in bank.hard_templates(topic) + bank.soft_templates(topic):
            if "{value}" not in tpl:
                raise TemplateBankError(f"grounded response template {tpl!r} missing {{value}}")
    return bank
