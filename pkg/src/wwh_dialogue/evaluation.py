"""Objective metrics for personalized dialogue models.

Four families:

* fluency — perplexity of gold responses under the model (teacher-forced,
  token-pooled over the whole evaluation set);
* grounding tendency — content-word F1 and IDF-weighted persona coverage of
  *generated* responses against the instance's persona subset;
* control — accuracy of the freely decoded response-type label against gold,
  reported per class;
* grounding level — a rule-based hard/soft/none judgment per response.

All lexical comparison goes through :mod:`wwh_dialogue.textnorm`, so word
order and punctuation never affect scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import CRTL, PRTL
from .model.generate import DecodeSession, _allowed_word_mask, rtl_slot_logprobs
from .model.network import forward, masked_token_logprobs
from .serialization import TrainingInstance, deserialize
from .textnorm import content_words, jaccard
from .vocab import CRTL_TOK, EOS, PAD, PRTL_TOK

HARD = "hard"
SOFT = "soft"
NONE = "none"


class EvalError(ValueError):
    """Raised for unusable evaluation inputs (empty sets, missing labels)."""


# ---------------------------------------------------------------------------
# Pure text metrics


def persona_f1(response_text: str, persona_texts) -> float:
    """Content-word F1 between a response and the union of persona attributes.

    Precision counts over the response's distinct content words, recall over
    the union of the attributes' content words. Returns 0.0 whenever either
    side has no content words.
    """
    resp = content_words(response_text)
    persona: set[str] = set()
    for text in persona_texts:
        persona |= content_words(text)
    if not resp or not persona:
        return 0.0
    overlap = len(resp & persona)
    if overlap == 0:
        return 0.0
    precision = overlap / len(resp)
    recall = overlap / len(persona)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class IdfTable:
    """Smoothed inverse document frequencies over persona attributes.

    Each attribute text is one document. Unseen words take the df=0 value,
    the table's maximum, so coverage of novel persona wording is not
    silently discounted.
    """

    values: dict[str, float]
    default: float

    def idf(self, word: str) -> float:
        return self.values.get(word, self.default)


def build_idf_table(attr_texts) -> IdfTable:
    """IDF table over an iterable of persona attribute texts."""
    docs = [content_words(t) for t in attr_texts]
    n = len(docs)
    df: dict[str, int] = {}
    for doc in docs:
        for w in doc:
            df[w] = df.get(w, 0) + 1
    values = {w: math.log((1 + n) / (1 + c)) + 1.0 for w, c in df.items()}
    return IdfTable(values=values, default=math.log(1 + n) + 1.0)


def p_cover(response_text: str, persona_texts, idf_table: IdfTable) -> float:
    """Best IDF-mass coverage of any one attribute by the response.

    For each attribute, the IDF mass of its content words that appear in the
    response divided by its total content-word IDF mass; the score is the
    maximum over attributes, 0.0 for an empty subset or attributes with no
    content words. Masses are exactly-rounded sums (math.fsum) so the value
    is independent of word order and reproducible bit-for-bit by any
    reference implementation that sums the same terms.
    """
    resp = content_words(response_text)
    best = 0.0
    for text in persona_texts:
        attr = content_words(text)
        if not attr:
            continue
        total = math.fsum(idf_table.idf(w) for w in attr)
        covered = math.fsum(idf_table.idf(w) for w in attr if w in resp)
        best = max(best, covered / total)
    return best


@dataclass(frozen=True)
class GroundingJudgment:
    """Rule-based grounding level of one response."""

    level: str  # HARD | SOFT | NONE
    similarity: float
    matched_persona_id: str | None


def classify_grounding(response_text: str, persona, rtl_emitted: str) -> GroundingJudgment:
    """Judge how strongly a response grounds a persona attribute.

    `persona` is an iterable of (id, text) pairs. A CRTL response is NONE by
    definition. Otherwise the attribute with the highest content-word Jaccard
    similarity to the response is selected (ties broken by lowest id) and the
    judgment is HARD at similarity >= 0.5, SOFT below.
    """
    if rtl_emitted == CRTL:
        return GroundingJudgment(level=NONE, similarity=0.0, matched_persona_id=None)
    if rtl_emitted != PRTL:
        raise EvalError(f"unknown response-type label {rtl_emitted!r}")
    resp = content_words(response_text)
    best_sim = -1.0
    best_id: str | None = None
    for attr_id, text in sorted(persona, key=lambda p: p[0]):
        sim = jaccard(content_words(text), resp)
        if sim > best_sim:
            best_sim = sim
            best_id = attr_id
    if best_id is None:
        return GroundingJudgment(level=SOFT, similarity=0.0, matched_persona_id=None)
    level = HARD if best_sim >= 0.5 else SOFT
    return GroundingJudgment(level=level, similarity=best_sim, matched_persona_id=best_id)


# ---------------------------------------------------------------------------
# Model-dependent metrics


def _score_chunks(params, cfg, instances, pad_id: int, chunk: int):
    """Yield masked-token logprob arrays, one per instance, in order."""
    for start in range(0, len(instances), chunk):
        part = instances[start : start + chunk]
        T = max(len(i.input_ids) for i in part)
        ids = np.full((len(part), T), pad_id, dtype=np.int64)
        mask = np.zeros((len(part), T), dtype=bool)
        for r, inst in enumerate(part):
            ids[r, : len(inst.input_ids)] = inst.input_ids
            mask[r, : len(inst.loss_mask)] = inst.loss_mask
        logprobs = forward(params, ids, cfg)
        for r in range(len(part)):
            yield masked_token_logprobs(logprobs[r : r + 1], ids[r : r + 1], mask[r : r + 1])


def perplexity(params, cfg, instances, pad_id: int, chunk: int = 32) -> float:
    """exp of the mean masked NLL over every target token in the set."""
    if not instances:
        raise EvalError("empty evaluation set")
    total = 0.0
    count = 0
    for scores in _score_chunks(params, cfg, instances, pad_id, chunk):
        total += float(scores.sum())
        count += scores.shape[0]
    return math.exp(-total / count)


def _prompt_ids(instance: TrainingInstance) -> list[int]:
    """The serialized prefix up to and including the final agent marker."""
    mask_start = instance.loss_mask.index(True)
    return list(instance.input_ids[:mask_start])


def rtl_accuracy(params, cfg, vocab, instances, chunk: int = 32) -> dict[str, float]:
    """Free-decoded label-slot accuracy, per gold class.

    Every instance must carry a gold label in its serialized form; an empty
    gold class is an error.
    """
    golds: list[str] = []
    prompts: list[list[int]] = []
    for inst in instances:
        parsed = deserialize(inst.input_ids, vocab, require_rtl=True)
        golds.append(parsed.rtl)
        prompts.append(_prompt_ids(inst))
    hits = {PRTL: 0, CRTL: 0}
    totals = {PRTL: 0, CRTL: 0}
    for start in range(0, len(prompts), chunk):
        part = prompts[start : start + chunk]
        slot = rtl_slot_logprobs(params, cfg, vocab, part)
        for row, gold in zip(slot, golds[start : start + len(part)]):
            pred = PRTL if row[0] >= row[1] else CRTL
            totals[gold] += 1
            if pred == gold:
                hits[gold] += 1
    for cls in (PRTL, CRTL):
        if totals[cls] == 0:
            raise EvalError(f"no {cls}-labeled instances in the evaluation set")
    return {PRTL: hits[PRTL] / totals[PRTL], CRTL: hits[CRTL] / totals[CRTL]}


def _greedy_response(session: DecodeSession, logprobs, vocab, allowed, max_new_tokens: int):
    """Greedy word decode from a primed session; returns the response text."""
    eos_id = vocab.id(EOS)
    words: list[str] = []
    cfg_len = session.cfg.max_seq_len
    for _ in range(max_new_tokens):
        masked = np.where(allowed, logprobs, -np.inf)
        chosen = int(np.argmax(masked))
        if chosen == eos_id:
            break
        words.append(vocab.token(chosen))
        if session.length >= cfg_len:
            break
        logprobs = session.append(chosen)
    return " ".join(words)


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics over one evaluation set."""

    ppl: float
    f1: float
    p_cover: float
    rtl_accuracy: dict[str, float]
    grounding_counts: dict[str, int]
    n_instances: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        assert self.ppl > 0
        assert 0.0 <= self.f1 <= 1.0
        assert 0.0 <= self.p_cover <= 1.0
        for v in self.rtl_accuracy.values():
            assert 0.0 <= v <= 1.0
        assert sum(self.grounding_counts.values()) == self.n_instances

    def as_dict(self) -> dict:
        return {
            "ppl": self.ppl,
            "f1": self.f1,
            "p_cover": self.p_cover,
            "rtl_accuracy": dict(self.rtl_accuracy),
            "grounding_counts": dict(self.grounding_counts),
            "n_instances": self.n_instances,
            "meta": dict(self.meta),
        }


def evaluate_checkpoint(
    checkpoint,
    instances,
    idf_table: IdfTable,
    max_new_tokens: int = 40,
    positives_only: bool = False,
    chunk: int = 32,
) -> EvalReport:
    """Full evaluation of a checkpoint on serialized labeled instances.

    Perplexity and label accuracy are computed against the gold tokens;
    F1, coverage, and grounding levels are computed on greedy free-decoded
    responses (the label slot included, so the model chooses whether to
    personalize). With positives_only=True, F1 and coverage are measured
    against the attributes flagged positive in each instance's metadata
    rather than the whole subset.

    A no-label-regime checkpoint (rtl_mode False) is evaluated on instances
    serialized without the label slot: label accuracy is omitted and every
    decoded response is judged as a personalization candidate (hard/soft
    only), since the model emits no WHEN signal to condition on.
    """
    if not instances:
        raise EvalError("empty evaluation set")
    vocab = checkpoint.vocab
    cfg = checkpoint.config
    params = checkpoint.params64()
    pad_id = vocab.id(PAD)
    rtl_present = checkpoint.rtl_mode

    ppl = perplexity(params, cfg, instances, pad_id, chunk=chunk)
    accuracy = rtl_accuracy(params, cfg, vocab, instances, chunk=chunk) if rtl_present else {}

    allowed = _allowed_word_mask(vocab)
    prtl_id, crtl_id = vocab.id(PRTL_TOK), vocab.id(CRTL_TOK)
    counts = {HARD: 0, SOFT: 0, NONE: 0}
    f1_values: list[float] = []
    cover_values: list[float] = []
    for inst in instances:
        parsed = deserialize(inst.input_ids, vocab, require_rtl=rtl_present)
        if positives_only:
            try:
                positive_idx = inst.meta["positive_idx"]
            except (TypeError, KeyError):
                raise EvalError("positives_only requires positive_idx metadata") from None
            texts = tuple(parsed.persona_texts[i] for i in positive_idx)
        else:
            texts = parsed.persona_texts

        session = DecodeSession(params, cfg)
        logprobs = session.prime(_prompt_ids(inst))
        if rtl_present:
            chosen = prtl_id if logprobs[prtl_id] >= logprobs[crtl_id] else crtl_id
            emitted = PRTL if chosen == prtl_id else CRTL
            logprobs = session.append(chosen)
        else:
            emitted = PRTL
        text = _greedy_response(session, logprobs, vocab, allowed, max_new_tokens)

        pairs = [(f"p{i}", t) for i, t in enumerate(parsed.persona_texts)]
        judgment = classify_grounding(text, pairs, emitted)
        key = {HARD: HARD, SOFT: SOFT, NONE: NONE}[judgment.level]
        counts[key] += 1
        f1_values.append(persona_f1(text, texts))
        cover_values.append(p_cover(text, texts, idf_table))

    return EvalReport(
        ppl=ppl,
        f1=float(np.mean(f1_values)),
        p_cover=float(np.mean(cover_values)),
        rtl_accuracy=accuracy,
        grounding_counts={
            HARD: counts[HARD],
            SOFT: counts[SOFT],
            "non_personalized": counts[NONE],
        },
        n_instances=len(instances),
    )
