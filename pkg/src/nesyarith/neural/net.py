"""Forward and backward passes for the 1-layer encoder-decoder.

Post-layer-norm transformer blocks: multi-head scaled dot-product attention,
residual + layer norm, position-wise ReLU feed-forward, residual + layer
norm; the decoder adds causally masked self-attention and cross-attention
into the encoder memory, then a linear projection to vocabulary logits.

Every *_fwd function returns (output, cache) and has a *_bwd twin that turns
the upstream gradient plus the cache into input/parameter gradients.  All
math follows the dtype of its inputs (float32 in training, float64 inside
the gradient checker); softmax denominators and layer-norm statistics always
accumulate in float64.
"""

from __future__ import annotations

import numpy as np

from .params import ModelConfig, PEMode
from .positional import positions_for, sinusoidal_table


class ShapeMismatchError(ValueError):
    """Tensor shapes disagree with the model configuration."""


def _check_emb(x: np.ndarray, cfg: ModelConfig, what: str) -> None:
    if x.ndim != 3 or x.shape[-1] != cfg.d_model:
        raise ShapeMismatchError(
            f"{what} must be (batch, time, {cfg.d_model}), got {x.shape}"
        )


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def softmax(x: np.ndarray, keep: np.ndarray | None = None) -> np.ndarray:
    """Softmax over the last axis; the denominator accumulates in float64.

    ``keep`` is a boolean mask broadcastable to ``x``; masked-out entries get
    probability exactly 0.  Rows must keep at least one entry.
    """
    s = x
    if keep is not None:
        s = np.where(keep, s, -np.inf)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    denom = e.sum(axis=-1, keepdims=True, dtype=np.float64)
    return e / denom.astype(x.dtype, copy=False)


def _softmax_bwd(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    inner = (dp * p).sum(axis=-1, keepdims=True, dtype=np.float64)
    return p * (dp - inner.astype(p.dtype, copy=False))


def layer_norm_fwd(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
):
    """Normalize the last axis; mean/variance accumulate in float64."""
    mu = x.mean(axis=-1, keepdims=True, dtype=np.float64)
    diff = x - mu.astype(x.dtype, copy=False)
    var = (diff * diff).mean(axis=-1, keepdims=True, dtype=np.float64)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
    xhat = diff * inv
    y = xhat * gamma + beta
    cache = (xhat, inv, gamma)
    return y, cache


def layer_norm_bwd(dy: np.ndarray, cache):
    xhat, inv, gamma = cache
    lead = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=lead, dtype=np.float64).astype(dy.dtype, copy=False)
    dbeta = dy.sum(axis=lead, dtype=np.float64).astype(dy.dtype, copy=False)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True, dtype=np.float64).astype(dy.dtype, copy=False)
    m2 = (
        (dxhat * xhat)
        .mean(axis=-1, keepdims=True, dtype=np.float64)
        .astype(dy.dtype, copy=False)
    )
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def _matmul_grad_w(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient of y = x @ W for W, collapsing all leading axes."""
    din, dout = x.shape[-1], dy.shape[-1]
    return x.reshape(-1, din).T @ dy.reshape(-1, dout)


def ffn_fwd(x: np.ndarray, w1, b1, w2, b2):
    pre = x @ w1 + b1
    h = np.maximum(pre, 0)
    y = h @ w2 + b2
    return y, (x, pre > 0, h)


def ffn_bwd(dy: np.ndarray, cache, w1, w2):
    x, relu_mask, h = cache
    db2 = dy.reshape(-1, dy.shape[-1]).sum(axis=0, dtype=np.float64).astype(dy.dtype)
    dw2 = _matmul_grad_w(h, dy)
    dh = (dy @ w2.T) * relu_mask
    db1 = dh.reshape(-1, dh.shape[-1]).sum(axis=0, dtype=np.float64).astype(dy.dtype)
    dw1 = _matmul_grad_w(x, dh)
    dx = dh @ w1.T
    return dx, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(b, t, h * dh)


def mha_fwd(
    x_q: np.ndarray,
    x_kv: np.ndarray,
    wq,
    wk,
    wv,
    wo,
    n_heads: int,
    keep: np.ndarray | None = None,
):
    """Multi-head attention; ``keep`` masks (query, key) pairs."""
    dh = x_q.shape[-1] // n_heads
    scale = np.asarray(1.0 / np.sqrt(dh), dtype=x_q.dtype)
    q = _split_heads(x_q @ wq, n_heads)
    k = _split_heads(x_kv @ wk, n_heads)
    v = _split_heads(x_kv @ wv, n_heads)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    probs = softmax(scores, keep)
    ctx = _merge_heads(probs @ v)
    out = ctx @ wo
    cache = (x_q, x_kv, q, k, v, probs, ctx, scale)
    return out, cache


def mha_bwd(dout: np.ndarray, cache, wq, wk, wv, wo, n_heads: int):
    x_q, x_kv, q, k, v, probs, ctx, scale = cache
    dwo = _matmul_grad_w(ctx, dout)
    dctx = _split_heads(dout @ wo.T, n_heads)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = _softmax_bwd(probs, dprobs) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    dqm = _merge_heads(dq)
    dkm = _merge_heads(dk)
    dvm = _merge_heads(dv)
    dwq = _matmul_grad_w(x_q, dqm)
    dwk = _matmul_grad_w(x_kv, dkm)
    dwv = _matmul_grad_w(x_kv, dvm)
    dx_q = dqm @ wq.T
    dx_kv = dkm @ wk.T + dvm @ wv.T
    grads = {"wq": dwq, "wk": dwk, "wv": dwv, "wo": dwo}
    return dx_q, dx_kv, grads


def dropout_fwd(x: np.ndarray, rate: float, rng: np.random.Generator | None):
    """Inverted dropout; identity when rate is 0 or no RNG is supplied."""
    if rate == 0.0 or rng is None:
        return x, None
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / np.asarray(
        1.0 - rate, dtype=x.dtype
    )
    return x * mask, mask


def dropout_bwd(dy: np.ndarray, mask):
    return dy if mask is None else dy * mask


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------


def embed_ids(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    ids: np.ndarray,
    pos_rows: np.ndarray,
) -> np.ndarray:
    """Token embeddings plus the positional-table rows given per position.

    ``ids`` and ``pos_rows`` are (batch, time) integer arrays.
    """
    tok = params["tok_emb"]
    table = sinusoidal_table(cfg.max_positions, cfg.d_model)
    x = tok[ids]
    if cfg.scale_embedding:
        x = x * np.asarray(np.sqrt(cfg.d_model), dtype=tok.dtype)
    return x + table[pos_rows].astype(tok.dtype, copy=False)


def embed_ids_bwd(
    dx: np.ndarray, ids: np.ndarray, cfg: ModelConfig, vocab_size: int
) -> np.ndarray:
    """Scatter-add the embedding gradient back onto the token table."""
    d_tok = np.zeros((vocab_size, cfg.d_model), dtype=dx.dtype)
    scaled = dx
    if cfg.scale_embedding:
        scaled = dx * np.asarray(np.sqrt(cfg.d_model), dtype=dx.dtype)
    np.add.at(d_tok, ids.reshape(-1), scaled.reshape(-1, cfg.d_model))
    return d_tok


def embed(
    ids,
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Embed one token-id sequence, drawing fresh positions for it.

    Sinusoidal mode uses rows 0..len-1; label mode draws len sorted distinct
    rows from [0, max_positions).  Returns (len, d_model).
    """
    ids = np.asarray(ids)
    pos = positions_for(rng, len(ids), cfg)
    return embed_ids(params, cfg, ids[None, :], pos[None, :])[0]


# ---------------------------------------------------------------------------
# encoder / decoder layers
# ---------------------------------------------------------------------------


def _sub(params: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def _causal_keep(t: int) -> np.ndarray:
    return np.tril(np.ones((t, t), dtype=bool))[None, None, :, :]


def encoder_forward_cached(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    src_emb: np.ndarray,
    src_keep: np.ndarray | None = None,
    drop_rng: np.random.Generator | None = None,
):
    """One post-LN encoder layer over embedded input (batch, time, d_model)."""
    _check_emb(src_emb, cfg, "encoder input")
    attn = _sub(params, "enc.attn")
    keep = None if src_keep is None else src_keep[:, None, None, :]
    a_out, c_attn = mha_fwd(
        src_emb, src_emb, attn["wq"], attn["wk"], attn["wv"], attn["wo"],
        cfg.n_heads, keep,
    )
    a_out, m_drop1 = dropout_fwd(a_out, cfg.dropout, drop_rng)
    x1, c_ln1 = layer_norm_fwd(src_emb + a_out, params["enc.ln1.gamma"], params["enc.ln1.beta"])
    f_out, c_ff = ffn_fwd(x1, params["enc.ff.w1"], params["enc.ff.b1"],
                          params["enc.ff.w2"], params["enc.ff.b2"])
    f_out, m_drop2 = dropout_fwd(f_out, cfg.dropout, drop_rng)
    memory, c_ln2 = layer_norm_fwd(x1 + f_out, params["enc.ln2.gamma"], params["enc.ln2.beta"])
    cache = (c_attn, m_drop1, c_ln1, c_ff, m_drop2, c_ln2)
    return memory, cache


def encoder_backward(
    dmemory: np.ndarray,
    cache,
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    c_attn, m_drop1, c_ln1, c_ff, m_drop2, c_ln2 = cache
    dres2, g_ln2_g, g_ln2_b = layer_norm_bwd(dmemory, c_ln2)
    _acc(grads, "enc.ln2.gamma", g_ln2_g)
    _acc(grads, "enc.ln2.beta", g_ln2_b)
    df_out = dropout_bwd(dres2, m_drop2)
    dx1, g_ff = ffn_bwd(df_out, c_ff, params["enc.ff.w1"], params["enc.ff.w2"])
    for name, g in g_ff.items():
        _acc(grads, f"enc.ff.{name}", g)
    dx1 = dx1 + dres2
    dres1, g_ln1_g, g_ln1_b = layer_norm_bwd(dx1, c_ln1)
    _acc(grads, "enc.ln1.gamma", g_ln1_g)
    _acc(grads, "enc.ln1.beta", g_ln1_b)
    da_out = dropout_bwd(dres1, m_drop1)
    attn = _sub(params, "enc.attn")
    dx_q, dx_kv, g_attn = mha_bwd(
        da_out, c_attn, attn["wq"], attn["wk"], attn["wv"], attn["wo"], cfg.n_heads
    )
    for name, g in g_attn.items():
        _acc(grads, f"enc.attn.{name}", g)
    return dres1 + dx_q + dx_kv


def decoder_forward_cached(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    tgt_emb: np.ndarray,
    memory: np.ndarray,
    src_keep: np.ndarray | None = None,
    drop_rng: np.random.Generator | None = None,
):
    """Causal decoder layer + output projection over (batch, time, d_model)."""
    _check_emb(tgt_emb, cfg, "decoder input")
    _check_emb(memory, cfg, "memory")
    self_keep = _causal_keep(tgt_emb.shape[1])
    cross_keep = None if src_keep is None else src_keep[:, None, None, :]

    sa = _sub(params, "dec.self_attn")
    s_out, c_self = mha_fwd(
        tgt_emb, tgt_emb, sa["wq"], sa["wk"], sa["wv"], sa["wo"], cfg.n_heads, self_keep
    )
    s_out, m_drop1 = dropout_fwd(s_out, cfg.dropout, drop_rng)
    y1, c_ln1 = layer_norm_fwd(tgt_emb + s_out, params["dec.ln1.gamma"], params["dec.ln1.beta"])

    ca = _sub(params, "dec.cross_attn")
    c_out, c_cross = mha_fwd(
        y1, memory, ca["wq"], ca["wk"], ca["wv"], ca["wo"], cfg.n_heads, cross_keep
    )
    c_out, m_drop2 = dropout_fwd(c_out, cfg.dropout, drop_rng)
    y2, c_ln2 = layer_norm_fwd(y1 + c_out, params["dec.ln2.gamma"], params["dec.ln2.beta"])

    f_out, c_ff = ffn_fwd(y2, params["dec.ff.w1"], params["dec.ff.b1"],
                          params["dec.ff.w2"], params["dec.ff.b2"])
    f_out, m_drop3 = dropout_fwd(f_out, cfg.dropout, drop_rng)
    y3, c_ln3 = layer_norm_fwd(y2 + f_out, params["dec.ln3.gamma"], params["dec.ln3.beta"])

    logits = y3 @ params["out_proj"]
    cache = (c_self, m_drop1, c_ln1, c_cross, m_drop2, c_ln2, c_ff, m_drop3, c_ln3, y3)
    return logits, cache


def decoder_backward(
    dlogits: np.ndarray,
    cache,
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    grads: dict[str, np.ndarray],
):
    """Returns (d_tgt_emb, d_memory)."""
    (c_self, m_drop1, c_ln1, c_cross, m_drop2, c_ln2, c_ff, m_drop3, c_ln3, y3) = cache
    _acc(grads, "out_proj", _matmul_grad_w(y3, dlogits))
    dy3 = dlogits @ params["out_proj"].T

    dres3, g, b = layer_norm_bwd(dy3, c_ln3)
    _acc(grads, "dec.ln3.gamma", g)
    _acc(grads, "dec.ln3.beta", b)
    df = dropout_bwd(dres3, m_drop3)
    dy2, g_ff = ffn_bwd(df, c_ff, params["dec.ff.w1"], params["dec.ff.w2"])
    for name, gv in g_ff.items():
        _acc(grads, f"dec.ff.{name}", gv)
    dy2 = dy2 + dres3

    dres2, g, b = layer_norm_bwd(dy2, c_ln2)
    _acc(grads, "dec.ln2.gamma", g)
    _acc(grads, "dec.ln2.beta", b)
    dc_out = dropout_bwd(dres2, m_drop2)
    ca = _sub(params, "dec.cross_attn")
    dy1_attn, dmemory, g_cross = mha_bwd(
        dc_out, c_cross, ca["wq"], ca["wk"], ca["wv"], ca["wo"], cfg.n_heads
    )
    for name, gv in g_cross.items():
        _acc(grads, f"dec.cross_attn.{name}", gv)
    dy1 = dres2 + dy1_attn

    dres1, g, b = layer_norm_bwd(dy1, c_ln1)
    _acc(grads, "dec.ln1.gamma", g)
    _acc(grads, "dec.ln1.beta", b)
    ds_out = dropout_bwd(dres1, m_drop1)
    sa = _sub(params, "dec.self_attn")
    dx_q, dx_kv, g_self = mha_bwd(
        ds_out, c_self, sa["wq"], sa["wk"], sa["wv"], sa["wo"], cfg.n_heads
    )
    for name, gv in g_self.items():
        _acc(grads, f"dec.self_attn.{name}", gv)
    d_tgt_emb = dres1 + dx_q + dx_kv
    return d_tgt_emb, dmemory


def _acc(grads: dict[str, np.ndarray], name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


# ---------------------------------------------------------------------------
# spec-surface wrappers (no caches)
# ---------------------------------------------------------------------------


def encoder_forward(
    src_embedded: np.ndarray,
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    src_keep: np.ndarray | None = None,
) -> np.ndarray:
    """Memory matrix for embedded source input; accepts (T, d) or (B, T, d)."""
    single = src_embedded.ndim == 2
    x = src_embedded[None] if single else src_embedded
    memory, _ = encoder_forward_cached(params, cfg, x, src_keep)
    return memory[0] if single else memory


def decoder_forward(
    tgt_embedded: np.ndarray,
    memory: np.ndarray,
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    src_keep: np.ndarray | None = None,
) -> np.ndarray:
    """Vocabulary logits for embedded decoder input; causal by construction."""
    single = tgt_embedded.ndim == 2
    y = tgt_embedded[None] if single else tgt_embedded
    m = memory[None] if memory.ndim == 2 else memory
    logits, _ = decoder_forward_cached(params, cfg, y, m, src_keep)
    return logits[0] if single else logits


# ---------------------------------------------------------------------------
# incremental decoding (inference only)
# ---------------------------------------------------------------------------


class IncrementalDecoder:
    """KV-cached stepwise decoding, numerically equivalent to the full pass.

    The decoder's positional rows are fixed up front (one sorted draw per
    sequence in label mode), so a growing prefix always re-uses the encodings
    it was generated with.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        cfg: ModelConfig,
        memory: np.ndarray,
        pos_rows: np.ndarray,
        src_keep: np.ndarray | None = None,
    ):
        b, ts, d = memory.shape
        if d != cfg.d_model:
            raise ShapeMismatchError(f"memory width {d} != d_model {cfg.d_model}")
        self.params = params
        self.cfg = cfg
        self.memory = memory
        self.pos_rows = pos_rows
        self.max_steps = pos_rows.shape[1]
        self.src_keep = None if src_keep is None else src_keep[:, None, None, :]
        self.table = sinusoidal_table(cfg.max_positions, cfg.d_model)

        ca = _sub(params, "dec.cross_attn")
        self.cross_k = _split_heads(memory @ ca["wk"], cfg.n_heads)
        self.cross_v = _split_heads(memory @ ca["wv"], cfg.n_heads)

        dh = cfg.d_head
        self.self_k = np.zeros((b, cfg.n_heads, self.max_steps, dh), dtype=memory.dtype)
        self.self_v = np.zeros_like(self.self_k)
        self.t = 0

    def step(self, tokens: np.ndarray) -> np.ndarray:
        """Feed the token at the current position for every row; get logits."""
        if self.t >= self.max_steps:
            raise ShapeMismatchError("decoded past the preallocated position rows")
        p, cfg = self.params, self.cfg
        b = tokens.shape[0]
        x = p["tok_emb"][tokens]
        if cfg.scale_embedding:
            x = x * np.asarray(np.sqrt(cfg.d_model), dtype=x.dtype)
        x = x + self.table[self.pos_rows[:, self.t]].astype(x.dtype, copy=False)

        sa = _sub(p, "dec.self_attn")
        scale = np.asarray(1.0 / np.sqrt(cfg.d_head), dtype=x.dtype)
        q = (x @ sa["wq"]).reshape(b, cfg.n_heads, 1, cfg.d_head)
        self.self_k[:, :, self.t] = (x @ sa["wk"]).reshape(b, cfg.n_heads, cfg.d_head)
        self.self_v[:, :, self.t] = (x @ sa["wv"]).reshape(b, cfg.n_heads, cfg.d_head)
        k = self.self_k[:, :, : self.t + 1]
        v = self.self_v[:, :, : self.t + 1]
        probs = softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
        ctx = (probs @ v).reshape(b, cfg.d_model)
        y1, _ = layer_norm_fwd(x + ctx @ sa["wo"], p["dec.ln1.gamma"], p["dec.ln1.beta"])

        ca = _sub(p, "dec.cross_attn")
        q2 = (y1 @ ca["wq"]).reshape(b, cfg.n_heads, 1, cfg.d_head)
        keep = None if self.src_keep is None else self.src_keep
        probs2 = softmax((q2 @ self.cross_k.transpose(0, 1, 3, 2)) * scale, keep)
        ctx2 = (probs2 @ self.cross_v).reshape(b, cfg.d_model)
        y2, _ = layer_norm_fwd(y1 + ctx2 @ ca["wo"], p["dec.ln2.gamma"], p["dec.ln2.beta"])

        h = np.maximum(y2 @ p["dec.ff.w1"] + p["dec.ff.b1"], 0)
        y3, _ = layer_norm_fwd(
            y2 + h @ p["dec.ff.w2"] + p["dec.ff.b2"], p["dec.ln3.gamma"], p["dec.ln3.beta"]
        )
        self.t += 1
        return y3 @ p["out_proj"]
