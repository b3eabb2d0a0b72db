"""Decoding and scoring on top of the numpy network.

Generation is incremental with per-layer key/value caches (batch 1). The
response-type slot right after the final <AGT> marker is either forced to a
given label token or chosen by the model restricted to {<PRTL>, <CRTL>};
response decoding bans structural special tokens so emitted text always
parses back. Greedy decoding is exactly reproducible; top-k sampling is
deterministic given the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..corpus import CRTL, PRTL, Demographics, Turn
from ..serialization import serialize
from ..vocab import CRTL_TOK, EOS, PRTL_TOK, SPECIALS, Vocabulary
from .config import ModelConfig
from .network import ModelError, log_softmax, masked_token_logprobs, forward

_RTL_BY_TOKEN = {PRTL_TOK: PRTL, CRTL_TOK: CRTL}


@dataclass(frozen=True)
class DecodeConfig:
    max_new_tokens: int = 40
    top_k: int = 0  # 0 = greedy
    temperature: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class GenerationResult:
    rtl: str | None
    text: str
    token_logprobs: tuple[float, ...]
    prompt_len: int


class DecodeSession:
    """Incremental forward pass with KV caches; one sequence at a time."""

    def __init__(self, params: dict[str, np.ndarray], cfg: ModelConfig):
        self.params = params
        self.cfg = cfg
        self.dtype = params["tok_emb"].dtype
        H, dh, L = cfg.n_heads, cfg.d_head, cfg.max_seq_len
        self.k = [np.empty((H, L, dh), dtype=self.dtype) for _ in range(cfg.n_layers)]
        self.v = [np.empty((H, L, dh), dtype=self.dtype) for _ in range(cfg.n_layers)]
        self.length = 0
        self._scale = self.dtype.type(1.0 / math.sqrt(dh))

    def _ln(self, x, g, b):
        mu = x.mean()
        var = x.var()
        return (x - mu) / np.sqrt(var + 1e-5) * g + b

    def append(self, token_id: int) -> np.ndarray:
        """Feed one token; returns float64 next-token logprobs (vocab,)."""
        cfg, params = self.cfg, self.params
        pos = self.length
        if pos >= cfg.max_seq_len:
            raise ModelError(f"decode session exceeded max_seq_len {cfg.max_seq_len}")
        if not 0 <= token_id < cfg.vocab_size:
            raise ModelError(f"token id {token_id} out of range")
        H, dh, D = cfg.n_heads, cfg.d_head, cfg.d_model

        x = params["tok_emb"][token_id] + params["pos_emb"][pos]
        for i in range(cfg.n_layers):
            p = f"layers.{i}."
            h1 = self._ln(x, params[p + "ln1_g"], params[p + "ln1_b"])
            qkv = h1 @ params[p + "qkv_w"] + params[p + "qkv_b"]
            q, k, v = (a.reshape(H, dh) for a in np.split(qkv, 3))
            self.k[i][:, pos] = k
            self.v[i][:, pos] = v
            keys = self.k[i][:, : pos + 1]
            vals = self.v[i][:, : pos + 1]
            scores = np.einsum("hsd,hd->hs", keys, q) * self._scale
            m = scores.max(-1, keepdims=True)
            e = np.exp(scores - m)
            attn = e / e.sum(-1, keepdims=True)
            ctx = np.einsum("hs,hsd->hd", attn, vals)
            x = x + ctx.reshape(D) @ params[p + "out_w"] + params[p + "out_b"]
            h2 = self._ln(x, params[p + "ln2_g"], params[p + "ln2_b"])
            u = h2 @ params[p + "fc1_w"] + params[p + "fc1_b"]
            t = np.tanh(math.sqrt(2.0 / math.pi) * (u + 0.044715 * u**3))
            x = x + (0.5 * u * (1.0 + t)) @ params[p + "fc2_w"] + params[p + "fc2_b"]

        self.length = pos + 1
        xf = self._ln(x, params["lnf_g"], params["lnf_b"])
        logits = xf @ params["tok_emb"].T
        return log_softmax(logits)

    def prime(self, ids) -> np.ndarray:
        """Feed a whole prompt; returns logprobs after its last token."""
        if len(ids) == 0:
            raise ModelError("cannot prime with an empty prompt")
        out = None
        for tok in ids:
            out = self.append(int(tok))
        return out


def build_prompt_ids(
    demographics: Demographics,
    persona_texts: tuple[str, ...],
    context: list[Turn],
    vocab: Vocabulary,
    max_seq_len: int,
    rtl_mode: bool = True,
) -> list[int]:
    """Token ids up to and including the final <AGT> marker."""
    inst = serialize(
        demographics,
        persona_texts,
        context,
        CRTL if rtl_mode else None,
        "",
        vocab,
        max_seq_len=max_seq_len,
        include_rtl=rtl_mode,
    )
    strip = 2 if rtl_mode else 1  # placeholder label token and <EOS>
    return list(inst.input_ids[:-strip])


def _allowed_word_mask(vocab: Vocabulary) -> np.ndarray:
    allowed = np.ones(len(vocab), dtype=bool)
    for tok in SPECIALS:
        allowed[vocab.id(tok)] = False
    allowed[vocab.id(EOS)] = True
    return allowed


def _pick(logprobs: np.ndarray, allowed: np.ndarray, decode: DecodeConfig, rng) -> int:
    masked = np.where(allowed, logprobs, -np.inf)
    if decode.top_k <= 0:
        return int(np.argmax(masked))
    if decode.temperature <= 0:
        raise ModelError("temperature must be positive for sampling")
    scaled = masked / decode.temperature
    k = min(decode.top_k, int(allowed.sum()))
    top = np.argpartition(scaled, -k)[-k:]
    weights = np.exp(scaled[top] - scaled[top].max())
    weights /= weights.sum()
    return int(top[rng.choice(len(top), p=weights)])


def generate(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    vocab: Vocabulary,
    demographics: Demographics,
    persona_texts: tuple[str, ...],
    context: list[Turn],
    force_rtl: str | None = None,
    decode: DecodeConfig = DecodeConfig(),
    rtl_mode: bool = True,
) -> GenerationResult:
    """Generate the label slot (unless rtl_mode is off) and a response."""
    if force_rtl is not None and force_rtl not in (PRTL, CRTL):
        raise ModelError(f"force_rtl must be PRTL or CRTL, got {force_rtl!r}")
    prompt = build_prompt_ids(demographics, persona_texts, context, vocab, cfg.max_seq_len, rtl_mode)
    session = DecodeSession(params, cfg)
    logprobs = session.prime(prompt)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([decode.seed])))

    token_logprobs: list[float] = []
    rtl_emitted: str | None = None
    if rtl_mode:
        prtl_id, crtl_id = vocab.id(PRTL_TOK), vocab.id(CRTL_TOK)
        if force_rtl is not None:
            chosen = prtl_id if force_rtl == PRTL else crtl_id
        else:
            chosen = prtl_id if logprobs[prtl_id] >= logprobs[crtl_id] else crtl_id
        rtl_emitted = _RTL_BY_TOKEN[vocab.token(chosen)]
        token_logprobs.append(float(logprobs[chosen]))
        logprobs = session.append(chosen)

    allowed = _allowed_word_mask(vocab)
    eos_id = vocab.id(EOS)
    words: list[str] = []
    budget = min(decode.max_new_tokens, cfg.max_seq_len - session.length)
    for _ in range(budget):
        chosen = _pick(logprobs, allowed, decode, rng)
        token_logprobs.append(float(logprobs[chosen]))
        if chosen == eos_id:
            break
        words.append(vocab.token(chosen))
        if session.length >= cfg.max_seq_len:
            break
        logprobs = session.append(chosen)
    return GenerationResult(
        rtl=rtl_emitted,
        text=" ".join(words),
        token_logprobs=tuple(token_logprobs),
        prompt_len=len(prompt),
    )


def rtl_slot_logprobs(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    vocab: Vocabulary,
    prompts: list[list[int]],
) -> np.ndarray:
    """Label-slot logprobs for many prompts at once, via one padded forward.

    Returns (n, 2): columns are log P(<PRTL>), log P(<CRTL>) at each prompt's
    final position. Padding sits at the sequence end, so under causal masking
    the genuine positions are unaffected.
    """
    from ..vocab import PAD

    if not prompts:
        return np.empty((0, 2))
    pad_id = vocab.id(PAD)
    T = max(len(p) for p in prompts)
    ids = np.full((len(prompts), T), pad_id, dtype=np.int64)
    for i, p in enumerate(prompts):
        ids[i, : len(p)] = p
    logprobs = forward(params, ids, cfg)
    rows = logprobs[np.arange(len(prompts)), [len(p) - 1 for p in prompts]]
    return np.stack([rows[:, vocab.id(PRTL_TOK)], rows[:, vocab.id(CRTL_TOK)]], axis=1)


def score_instance(params: dict[str, np.ndarray], cfg: ModelConfig, instance) -> np.ndarray:
    """Teacher-forced logprobs of the masked tokens of one serialized instance."""
    ids = np.asarray(instance.input_ids, dtype=np.int64)[None, :]
    mask = np.asarray(instance.loss_mask, dtype=bool)[None, :]
    logprobs = forward(params, ids, cfg)
    return masked_token_logprobs(logprobs, ids, mask)


def score_batch(params: dict[str, np.ndarray], cfg: ModelConfig, instances, pad_id: int) -> list[np.ndarray]:
    """Teacher-forced masked-token logprobs for a batch, padded at the end."""
    if not instances:
        return []
    T = max(len(i.input_ids) for i in instances)
    B = len(instances)
    ids = np.full((B, T), pad_id, dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    for r, inst in enumerate(instances):
        ids[r, : len(inst.input_ids)] = inst.input_ids
        mask[r, : len(inst.loss_mask)] = inst.loss_mask
    logprobs = forward(params, ids, cfg)
    out = []
    for r, inst in enumerate(instances):
        row_ids = ids[r : r + 1]
        row_mask = mask[r : r + 1]
        out.append(masked_token_logprobs(logprobs[r : r + 1], row_ids, row_mask))
    return out
