"""Assembling (demographics, persona subset, context, label, response) into
token-id sequences and back.

Layout:

    <BOS> <DEMO> gender age <SEP>
    <PERSONA> attr_1 <SEP> attr_2 <SEP> ... attr_k <SEP>     (omitted when rho is empty)
    <USR> words ... <AGT> words ... <USR> words ...
    <AGT> <PRTL|CRTL> response words <EOS>

The loss mask is true exactly on the label slot, the response words, and
<EOS> — a contiguous suffix. When the sequence exceeds max_seq_len, the
oldest context turns are dropped one at a time; demographics, persona section
and the target turn are never cut. A no-label variant (include_rtl=False)
drops the slot entirely for the ablation that generates responses without
response-type control.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .corpus import AGENT, CRTL, PRTL, USER, Demographics, Turn
from .vocab import AGT, BOS, CRTL_TOK, DEMO, EOS, PERSONA, PRTL_TOK, SEP, USR, Vocabulary
from .textnorm import words

DEFAULT_MAX_SEQ_LEN = 256

_RTL_TO_TOKEN = {PRTL: PRTL_TOK, CRTL: CRTL_TOK}
_TOKEN_TO_RTL = {v: k for k, v in _RTL_TO_TOKEN.items()}


class SerializationError(ValueError):
    """Instance cannot be serialized or parsed back."""


@dataclass(frozen=True)
class TrainingInstance:
    input_ids: tuple[int, ...]
    loss_mask: tuple[bool, ...]
    rtl: str | None
    meta: dict = field(compare=False, default_factory=dict)

    def __post_init__(self):
        if len(self.input_ids) != len(self.loss_mask):
            raise SerializationError("input_ids and loss_mask lengths differ")
        # masked region must be a contiguous suffix
        mask = list(self.loss_mask)
        if True in mask:
            first = mask.index(True)
            if not all(mask[first:]):
                raise SerializationError("loss mask must be a contiguous suffix")


def _encode_text(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.encode_word(w) for w in words(text)]


def serialize(
    demographics: Demographics,
    persona_texts: tuple[str, ...],
    context: list[Turn],
    rtl: str | None,
    response: str,
    vocab: Vocabulary,
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN,
    include_rtl: bool = True,
    meta: dict | None = None,
) -> TrainingInstance:
    """Build one training/scoring instance.

    `context` holds the turns before the target agent turn, oldest first.
    `rtl` must be given when include_rtl is true; `response` may be empty only
    for generation prompts (the caller then strips the trailing <EOS>).
    """
    if include_rtl:
        if rtl not in _RTL_TO_TOKEN:
            raise SerializationError(f"rtl must be PRTL or CRTL, got {rtl!r}")
    elif rtl is not None and rtl not in _RTL_TO_TOKEN:
        raise SerializationError(f"bad rtl {rtl!r}")

    header = [vocab.id(BOS), vocab.id(DEMO)]
    header += _encode_text(demographics.gender, vocab)
    header += _encode_text(demographics.age_band, vocab)
    header.append(vocab.id(SEP))
    if persona_texts:
        header.append(vocab.id(PERSONA))
        for text in persona_texts:
            toks = _encode_text(text, vocab)
            if not toks:
                raise SerializationError("persona attribute text has no tokens")
            header += toks
            header.append(vocab.id(SEP))

    turn_chunks: list[list[int]] = []
    for turn in context:
        marker = USR if turn.speaker == USER else AGT
        turn_chunks.append([vocab.id(marker)] + _encode_text(turn.text, vocab))

    tail = [vocab.id(AGT)]
    mask_start_offset = len(tail)
    if include_rtl:
        tail.append(vocab.id(_RTL_TO_TOKEN[rtl]))
    tail += _encode_text(response, vocab)
    tail.append(vocab.id(EOS))

    fixed = len(header) + len(tail)
    if fixed > max_seq_len:
        raise SerializationError(
            f"instance needs {fixed} tokens with zero context turns; max_seq_len is {max_seq_len}"
        )
    keep = 0  # number of most-recent context turns that fit
    budget = max_seq_len - fixed
    total = 0
    for chunk in reversed(turn_chunks):
        if total + len(chunk) > budget:
            break
        total += len(chunk)
        keep += 1
    kept_chunks = turn_chunks[len(turn_chunks) - keep :]

    ids = list(header)
    for chunk in kept_chunks:
        ids += chunk
    prefix_len = len(ids) + mask_start_offset
    ids += tail
    mask = [False] * prefix_len + [True] * (len(ids) - prefix_len)
    return TrainingInstance(
        input_ids=tuple(ids),
        loss_mask=tuple(mask),
        rtl=rtl,
        meta=dict(meta or {}),
    )


@dataclass(frozen=True)
class ParsedInstance:
    demo_words: tuple[str, ...]
    persona_texts: tuple[str, ...]
    context: tuple[tuple[str, str], ...]  # (speaker, text)
    rtl: str | None
    response: str


def deserialize(input_ids, vocab: Vocabulary, require_rtl: bool = False) -> ParsedInstance:
    """Exact inverse of serialize on untruncated, normalized inputs.

    With require_rtl=True a sequence whose final agent slot lacks a
    PRTL/CRTL token is rejected as malformed.
    """
    toks = [vocab.token(i) for i in input_ids]
    pos = 0

    def fail(msg):
        raise SerializationError(f"malformed instance at position {pos}: {msg}")

    if not toks or toks[0] != BOS:
        fail(f"expected {BOS}")
    if len(toks) < 2 or toks[1] != DEMO:
        fail(f"expected {DEMO}")
    pos = 2
    demo: list[str] = []
    while pos < len(toks) and toks[pos] != SEP:
        demo.append(toks[pos])
        pos += 1
    if pos >= len(toks):
        fail(f"unterminated demographics (missing {SEP})")
    pos += 1

    personas: list[str] = []
    if pos < len(toks) and toks[pos] == PERSONA:
        pos += 1
        current: list[str] = []
        while True:
            if pos >= len(toks):
                fail("unterminated persona section")
            tok = toks[pos]
            if tok == SEP:
                personas.append(" ".join(current))
                current = []
                pos += 1
                if pos < len(toks) and toks[pos] in (USR, AGT):
                    break
            elif tok in (USR, AGT):
                fail("persona attribute missing closing separator")
            else:
                current.append(tok)
                pos += 1

    context: list[tuple[str, str]] = []
    rtl: str | None = None
    response: str | None = None
    while pos < len(toks):
        marker = toks[pos]
        if marker not in (USR, AGT):
            fail(f"expected turn marker, got {marker}")
        pos += 1
        speaker = USER if marker == USR else AGENT
        if speaker == AGENT and pos < len(toks) and toks[pos] in _TOKEN_TO_RTL:
            rtl = _TOKEN_TO_RTL[toks[pos]]
            pos += 1
            body: list[str] = []
            while pos < len(toks) and toks[pos] != EOS:
                if toks[pos] in (USR, AGT, SEP, PERSONA):
                    fail(f"unexpected {toks[pos]} inside response")
                body.append(toks[pos])
                pos += 1
            if pos >= len(toks):
                fail(f"missing {EOS}")
            if pos != len(toks) - 1:
                fail(f"tokens after {EOS}")
            response = " ".join(body)
            pos = len(toks)
            break
        body = []
        while pos < len(toks) and toks[pos] not in (USR, AGT, EOS):
            if toks[pos] in _TOKEN_TO_RTL:
                fail("label token outside the final agent slot")
            body.append(toks[pos])
            pos += 1
        if pos < len(toks) and toks[pos] == EOS:
            # final agent turn without a label slot (no-label regime)
            if speaker != AGENT:
                fail("sequence ends on a user turn")
            if pos != len(toks) - 1:
                fail(f"tokens after {EOS}")
            response = " ".join(body)
            pos = len(toks)
            break
        context.append((speaker, " ".join(body)))

    if response is None:
        fail(f"missing {EOS}-terminated response")
    if require_rtl and rtl is None:
        raise SerializationError("sequence is missing its response-type label slot")
    return ParsedInstance(
        demo_words=tuple(demo),
        persona_texts=tuple(personas),
        context=tuple(context),
        rtl=rtl,
        response=response,
    )


# ---------------------------------------------------------------------------
# Training file IO

_FILE_HEADER = "training_file"
_RECORD = "training_instance"


def write_training_file(instances, path, vocab: Vocabulary, extra_header: dict | None = None):
    header = {"record": _FILE_HEADER, "vocab_sha256": vocab.sha256(), "count": len(instances)}
    header.update(extra_header or {})
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for inst in instances:
            obj = {
                "record": _RECORD,
                "input_ids": list(inst.input_ids),
                "loss_mask": [1 if m else 0 for m in inst.loss_mask],
                "rtl": inst.rtl,
                "meta": inst.meta,
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def read_training_file(path) -> tuple[list[TrainingInstance], dict]:
    instances: list[TrainingInstance] = []
    header: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            kind = obj.get("record")
            if kind == _FILE_HEADER:
                header = obj
            elif kind == _RECORD:
                instances.append(
                    TrainingInstance(
                        input_ids=tuple(obj["input_ids"]),
                        loss_mask=tuple(bool(m) for m in obj["loss_mask"]),
                        rtl=obj.get("rtl"),
                        meta=obj.get("meta", {}),
                    )
                )
            else:
                raise SerializationError(f"{path}:{lineno}: unknown record {kind!r}")
    return instances, header
