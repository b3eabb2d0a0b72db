"""Decoder-only transformer in plain numpy with hand-written backprop.

Architecture: tied token embeddings, learned positional embeddings, pre-norm
blocks (LayerNorm -> multi-head causal attention -> residual, LayerNorm ->
GELU MLP -> residual), final LayerNorm, logits through the transposed token
embedding.

Causal masking is additive: future positions get -1e30 before softmax, which
underflows to an exact 0.0 weight, so a position's output is bit-identical no
matter what later tokens contain. log-softmax and the loss are always
computed in float64 regardless of parameter dtype; every forward call asserts
per-position normalization.

Training runs in float32; scoring and generation cast parameters to float64
(see cast_params). Gradients are exact analytic derivatives of the masked
mean NLL, verified against central finite differences in the test suite.
"""

from __future__ import annotations

import math

import numpy as np

from .config import ModelConfig

NEG_INF = -1e30
_LN_EPS = 1e-5
_INIT_STD = 0.02

# Verified by tests; disabling is not supported, the flag exists to make the
# contract greppable.
ASSERT_NORMALIZATION = True


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Parameters


def param_names(cfg: ModelConfig) -> list[str]:
    names = ["tok_emb", "pos_emb"]
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        names += [
            p + "ln1_g", p + "ln1_b",
            p + "qkv_w", p + "qkv_b",
            p + "out_w", p + "out_b",
            p + "ln2_g", p + "ln2_b",
            p + "fc1_w", p + "fc1_b",
            p + "fc2_w", p + "fc2_b",
        ]
    names += ["lnf_g", "lnf_b"]
    return names


def init_params(cfg: ModelConfig, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0xC0DE])))
    D, F, V = cfg.d_model, cfg.d_ffn, cfg.vocab_size

    def normal(*shape):
        return rng.normal(0.0, _INIT_STD, size=shape).astype(dtype)

    params: dict[str, np.ndarray] = {
        "tok_emb": normal(V, D),
        "pos_emb": normal(cfg.max_seq_len, D),
        "lnf_g": np.ones(D, dtype=dtype),
        "lnf_b": np.zeros(D, dtype=dtype),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        params[p + "ln1_g"] = np.ones(D, dtype=dtype)
        params[p + "ln1_b"] = np.zeros(D, dtype=dtype)
        params[p + "qkv_w"] = normal(D, 3 * D)
        params[p + "qkv_b"] = np.zeros(3 * D, dtype=dtype)
        params[p + "out_w"] = normal(D, D)
        params[p + "out_b"] = np.zeros(D, dtype=dtype)
        params[p + "ln2_g"] = np.ones(D, dtype=dtype)
        params[p + "ln2_b"] = np.zeros(D, dtype=dtype)
        params[p + "fc1_w"] = normal(D, F)
        params[p + "fc1_b"] = np.zeros(F, dtype=dtype)
        params[p + "fc2_w"] = normal(F, D)
        params[p + "fc2_b"] = np.zeros(D, dtype=dtype)
    return params


def cast_params(params: dict[str, np.ndarray], dtype) -> dict[str, np.ndarray]:
    return {k: np.ascontiguousarray(v, dtype=dtype) for k, v in params.items()}


def decayable(name: str) -> bool:
    """Weight decay applies to matrices and embeddings, not gains/biases."""
    return name.endswith(("_w", "tok_emb", "pos_emb"))


# ---------------------------------------------------------------------------
# Primitives


def _layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    dxhat = dy * g
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    mean1 = dxhat.mean(-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(-1, keepdims=True)
    dx = inv * (dxhat - mean1 - xhat * mean2)
    return dx, dg, db


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _gelu(u):
    # u*u*u, not u**3: integer-exponent pow on arrays hits libm powf and is
    # ~80x slower than two multiplies.
    t = np.tanh(_GELU_C * (u + _GELU_A * (u * u * u)))
    return 0.5 * u * (1.0 + t), t


def _gelu_bwd(du_out, u, t):
    sech2 = 1.0 - t * t
    return du_out * (0.5 * (1.0 + t) + 0.5 * u * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * u * u))


def _softmax_lastaxis(s):
    m = s.max(-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    """Float64 log-softmax with a normalization assertion (always on)."""
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(-1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(-1, keepdims=True))
    out = z - lse
    if ASSERT_NORMALIZATION:
        check = np.exp(out).sum(-1)
        err = np.abs(np.log(check)).max() if check.size else 0.0
        if not err < 1e-6:
            raise AssertionError(f"softmax rows are not normalized: max |log sum| = {err}")
    return out


def _causal_bias(T, dtype):
    bias = np.zeros((T, T), dtype=dtype)
    bias[np.triu_indices(T, k=1)] = NEG_INF
    return bias


def _split_heads(qkv, B, T, H, dh):
    return qkv.reshape(B, T, 3, H, dh).transpose(2, 0, 3, 1, 4)


def _dropout_mask(rng, shape, p, dtype):
    return (rng.random(shape) >= p).astype(dtype) / np.asarray(1.0 - p, dtype=dtype)


# ---------------------------------------------------------------------------
# Forward


def forward(
    params: dict[str, np.ndarray],
    ids: np.ndarray,
    cfg: ModelConfig,
    dropout_rng: np.random.Generator | None = None,
    collect_cache: bool = False,
):
    """Per-position next-token log-probabilities, shape (B, T, vocab).

    Returns float64 logprobs; with collect_cache=True also returns the
    intermediates needed by backward().
    """
    ids = np.asarray(ids)
    if ids.ndim == 1:
        ids = ids[None, :]
    B, T = ids.shape
    if T > cfg.max_seq_len:
        raise ModelError(f"sequence length {T} exceeds max_seq_len {cfg.max_seq_len}")
    if T == 0:
        raise ModelError("empty input")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ModelError("token id out of vocabulary range")

    E = params["tok_emb"]
    dtype = E.dtype
    H, dh = cfg.n_heads, cfg.d_head
    scale = dtype.type(1.0 / math.sqrt(dh))
    bias = _causal_bias(T, dtype)
    use_dropout = dropout_rng is not None and cfg.dropout > 0.0

    x = E[ids] + params["pos_emb"][:T]
    layer_caches = []
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h1, ln1_cache = _layernorm(x, params[p + "ln1_g"], params[p + "ln1_b"])
        qkv = h1 @ params[p + "qkv_w"] + params[p + "qkv_b"]
        q, k, v = _split_heads(qkv, B, T, H, dh)
        scores = q @ k.swapaxes(-1, -2) * scale + bias
        attn = _softmax_lastaxis(scores)
        ctx = attn @ v
        merged = ctx.transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)
        attn_out = merged @ params[p + "out_w"] + params[p + "out_b"]
        attn_drop = _dropout_mask(dropout_rng, attn_out.shape, cfg.dropout, dtype) if use_dropout else None
        if attn_drop is not None:
            attn_out = attn_out * attn_drop
        x_mid = x + attn_out

        h2, ln2_cache = _layernorm(x_mid, params[p + "ln2_g"], params[p + "ln2_b"])
        u = h2 @ params[p + "fc1_w"] + params[p + "fc1_b"]
        act, tanh_cache = _gelu(u)
        mlp_out = act @ params[p + "fc2_w"] + params[p + "fc2_b"]
        mlp_drop = _dropout_mask(dropout_rng, mlp_out.shape, cfg.dropout, dtype) if use_dropout else None
        if mlp_drop is not None:
            mlp_out = mlp_out * mlp_drop
        x_out = x_mid + mlp_out

        if collect_cache:
            layer_caches.append(
                dict(
                    x_in=x, h1=h1, ln1=ln1_cache, q=q, k=k, v=v, attn=attn,
                    merged=merged, attn_drop=attn_drop, x_mid=x_mid, h2=h2,
                    ln2=ln2_cache, u=u, tanh=tanh_cache, act=act, mlp_drop=mlp_drop,
                )
            )
        x = x_out

    xf, lnf_cache = _layernorm(x, params["lnf_g"], params["lnf_b"])
    logits = xf @ E.T
    logprobs = log_softmax(logits)
    if not collect_cache:
        return logprobs
    cache = dict(ids=ids, xf=xf, lnf=lnf_cache, layers=layer_caches, x_last=x)
    return logprobs, cache


# ---------------------------------------------------------------------------
# Loss


def _target_weights(ids: np.ndarray, loss_mask: np.ndarray):
    """Per-position CE weights: position t predicts token t+1 when masked."""
    ids = np.asarray(ids)
    mask = np.asarray(loss_mask, dtype=bool)
    if ids.ndim == 1:
        ids, mask = ids[None, :], mask[None, :]
    if mask[:, 0].any():
        raise ModelError("loss mask cannot start at position 0 (nothing precedes it)")
    n = int(mask[:, 1:].sum())
    if n == 0:
        raise ModelError("loss mask selects no positions")
    # w[b, t] = 1/n where mask[b, t+1]
    w = np.zeros(ids.shape, dtype=np.float64)
    w[:, :-1][mask[:, 1:]] = 1.0 / n
    return ids, mask, w, n


def nll_loss(logprobs: np.ndarray, ids: np.ndarray, loss_mask: np.ndarray) -> float:
    """Mean -logprob of each masked token given its prefix."""
    ids, mask, w, n = _target_weights(ids, loss_mask)
    B, T = ids.shape
    rows = logprobs[np.arange(B)[:, None], np.arange(T - 1)[None, :], ids[:, 1:]]
    return float(-(rows * (w[:, :-1] * n)).sum() / n)


def masked_token_logprobs(logprobs: np.ndarray, ids: np.ndarray, loss_mask: np.ndarray) -> np.ndarray:
    """Flat array of log-probabilities of the masked tokens, in order."""
    ids, mask, _, _ = _target_weights(ids, loss_mask)
    out = []
    B, T = ids.shape
    for b in range(B):
        pos = np.nonzero(mask[b])[0]
        pos = pos[pos >= 1]
        out.append(logprobs[b, pos - 1, ids[b, pos]])
    return np.concatenate(out) if out else np.empty(0)


def loss_and_grad(
    params: dict[str, np.ndarray],
    ids: np.ndarray,
    loss_mask: np.ndarray,
    cfg: ModelConfig,
    dropout_rng: np.random.Generator | None = None,
):
    """Masked mean NLL and exact gradients for every parameter."""
    ids, mask, w, n = _target_weights(ids, loss_mask)
    logprobs, cache = forward(params, ids, cfg, dropout_rng=dropout_rng, collect_cache=True)
    loss = nll_loss(logprobs, ids, mask)

    B, T = ids.shape
    E = params["tok_emb"]
    dtype = E.dtype
    H, dh, D = cfg.n_heads, cfg.d_head, cfg.d_model

    probs = np.exp(logprobs)
    dlogits = probs * w[..., None]
    b_idx = np.repeat(np.arange(B), T - 1)
    t_idx = np.tile(np.arange(T - 1), B)
    dlogits[b_idx, t_idx, ids[:, 1:].ravel()] -= w[:, :-1].ravel()
    dlogits = dlogits.astype(dtype)

    grads = {name: np.zeros_like(arr) for name, arr in params.items()}

    xf = cache["xf"]
    V = cfg.vocab_size
    grads["tok_emb"] += dlogits.reshape(-1, V).T @ xf.reshape(-1, D)
    dxf = dlogits @ E
    dx, dgf, dbf = _layernorm_bwd(dxf, cache["lnf"])
    grads["lnf_g"] += dgf
    grads["lnf_b"] += dbf

    scale = dtype.type(1.0 / math.sqrt(dh))
    for i in reversed(range(cfg.n_layers)):
        p = f"layers.{i}."
        c = cache["layers"][i]

        # MLP branch
        dmlp = dx if c["mlp_drop"] is None else dx * c["mlp_drop"]
        act2d = c["act"].reshape(-1, cfg.d_ffn)
        grads[p + "fc2_w"] += act2d.T @ dmlp.reshape(-1, D)
        grads[p + "fc2_b"] += dmlp.sum((0, 1))
        dact = dmlp @ params[p + "fc2_w"].T
        du = _gelu_bwd(dact, c["u"], c["tanh"])
        h2_2d = c["h2"].reshape(-1, D)
        grads[p + "fc1_w"] += h2_2d.T @ du.reshape(-1, cfg.d_ffn)
        grads[p + "fc1_b"] += du.sum((0, 1))
        dh2 = du @ params[p + "fc1_w"].T
        dmid_ln, dg2, db2 = _layernorm_bwd(dh2, c["ln2"])
        grads[p + "ln2_g"] += dg2
        grads[p + "ln2_b"] += db2
        dx_mid = dx + dmid_ln

        # attention branch
        dattn_out = dx_mid if c["attn_drop"] is None else dx_mid * c["attn_drop"]
        merged2d = c["merged"].reshape(-1, D)
        grads[p + "out_w"] += merged2d.T @ dattn_out.reshape(-1, D)
        grads[p + "out_b"] += dattn_out.sum((0, 1))
        dmerged = dattn_out @ params[p + "out_w"].T
        dctx = dmerged.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        dA = dctx @ c["v"].swapaxes(-1, -2)
        dv = c["attn"].swapaxes(-1, -2) @ dctx
        attn = c["attn"]
        ds = (dA - (dA * attn).sum(-1, keepdims=True)) * attn
        dq = ds @ c["k"] * scale
        dk = ds.swapaxes(-1, -2) @ c["q"] * scale
        dqkv = (
            np.stack([dq, dk, dv], axis=0)
            .transpose(1, 3, 0, 2, 4)
            .reshape(B, T, 3 * D)
        )
        h1_2d = c["h1"].reshape(-1, D)
        grads[p + "qkv_w"] += h1_2d.T @ dqkv.reshape(-1, 3 * D)
        grads[p + "qkv_b"] += dqkv.sum((0, 1))
        dh1 = dqkv @ params[p + "qkv_w"].T
        din_ln, dg1, db1 = _layernorm_bwd(dh1, c["ln1"])
        grads[p + "ln1_g"] += dg1
        grads[p + "ln1_b"] += db1
        dx = dx_mid + din_ln

    # embeddings
    np.add.at(grads["tok_emb"], ids, dx)
    grads["pos_emb"][:T] += dx.sum(0)
    return loss, grads
