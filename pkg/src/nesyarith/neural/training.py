"""Autoregressive training without teacher forcing, Adam, gradient checking.

The rollout feeds the model's own greedy choices back as decoder input for
exactly len(target)+1 steps.  Token selection is not differentiable, so the
loss backpropagates through one full causal decoder pass over the chosen
rollout tokens, whose per-step logits are mathematically identical to the
rollout's.  A teacher-forced variant (decoder fed the gold prefix) exists
for gradient checking and ablations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..datagen import DEFAULT_VOCAB, Example, Split, Task, Vocab, encode
from .net import (
    IncrementalDecoder,
    decoder_backward,
    decoder_forward_cached,
    embed_ids,
    embed_ids_bwd,
    encoder_backward,
    encoder_forward_cached,
)
from .params import ModelConfig, PEMode, init_params
from .positional import positions_for


class NonFiniteLossError(RuntimeError):
    def __init__(self, input_text: str, loss: float):
        super().__init__(f"non-finite loss {loss} on example {input_text!r}")
        self.input_text = input_text


@dataclass
class AdamState:
    """Bias-corrected Adam with float64 moment accumulators."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(
    params: dict[str, np.ndarray],
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros(p.shape, dtype=np.float64)
        state.v[name] = np.zeros(p.shape, dtype=np.float64)
    return state


def adam_step(
    params: dict[str, np.ndarray], state: AdamState, grads: dict[str, np.ndarray]
) -> None:
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads[name].astype(np.float64, copy=False)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p -= update.astype(p.dtype, copy=False)


def _pack_batch(batch: list[Example], cfg: ModelConfig, vocab: Vocab):
    """Pad encoder inputs and per-example target token rows."""
    if not batch:
        raise ValueError("batch must be non-empty")
    if len({exm.task for exm in batch}) != 1:
        raise ValueError("all examples in a batch must share the same task")
    src_seqs = [encode(exm.input_text, vocab) for exm in batch]
    tgt_seqs = [encode(exm.target_text, vocab)[1:] for exm in batch]  # chars + EOS
    b = len(batch)
    s_max = max(len(s) for s in src_seqs)
    t_max = max(len(t) for t in tgt_seqs)
    if t_max > cfg.max_decode_len:
        raise ValueError(
            f"target needs {t_max} decode steps but max_decode_len={cfg.max_decode_len}"
        )
    src_ids = np.full((b, s_max), vocab.pad, dtype=np.int64)
    src_keep = np.zeros((b, s_max), dtype=bool)
    targets = np.full((b, t_max), vocab.pad, dtype=np.int64)
    steps = np.empty(b, dtype=np.int64)
    for i, (s, t) in enumerate(zip(src_seqs, tgt_seqs)):
        src_ids[i, : len(s)] = s
        src_keep[i, : len(s)] = True
        targets[i, : len(t)] = t
        steps[i] = len(t)
    return src_ids, src_keep, targets, steps


def _xent(logits: np.ndarray, targets: np.ndarray, weights: np.ndarray):
    """Weighted softmax cross-entropy; returns (ce per position, dlogits)."""
    l64 = logits.astype(np.float64, copy=False)
    lmax = l64.max(axis=-1, keepdims=True)
    lse = lmax + np.log(np.exp(l64 - lmax).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(l64, targets[..., None], axis=-1)[..., 0]
    ce = lse[..., 0] - picked
    probs = np.exp(l64 - lse)
    np.subtract.at(probs, (*np.indices(targets.shape), targets), 1.0)
    dlogits = (probs * weights[..., None]).astype(logits.dtype, copy=False)
    return ce, dlogits


def forward_backward(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    batch: list[Example],
    rng: np.random.Generator | None,
    vocab: Vocab = DEFAULT_VOCAB,
    want_relu_masks: bool = False,
):
    """Loss and full gradient map for one batch; no parameter update.

    Returns (mean_loss, grads, per_example_loss); with ``want_relu_masks``
    a fourth element carries the two feed-forward activation sign patterns,
    which the gradient checker uses to reject finite-difference intervals
    that straddle a ReLU kink.
    """
    src_ids, src_keep, targets, steps = _pack_batch(batch, cfg, vocab)
    b, t_max = targets.shape

    src_pos = np.zeros_like(src_ids)
    for i in range(b):
        n_real = int(src_keep[i].sum())
        src_pos[i, :n_real] = positions_for(rng, n_real, cfg)
    dec_pos_full = np.stack(
        [positions_for(rng, cfg.max_decode_len, cfg) for _ in range(b)]
    )
    dec_pos = dec_pos_full[:, :t_max]

    drop_rng = rng if cfg.dropout > 0 else None
    src_emb = embed_ids(params, cfg, src_ids, src_pos)
    memory, enc_cache = encoder_forward_cached(params, cfg, src_emb, src_keep, drop_rng)

    dec_in = np.full((b, t_max), vocab.pad, dtype=np.int64)
    dec_in[:, 0] = vocab.sos
    if cfg.teacher_forcing:
        if t_max > 1:
            dec_in[:, 1:] = targets[:, :-1]
    else:
        # Greedy rollout, gradient-free; the cached pass below recomputes the
        # same logits differentiably (causal masking makes them identical).
        inc = IncrementalDecoder(params, cfg, memory, dec_pos, src_keep)
        tokens = np.full(b, vocab.sos, dtype=np.int64)
        for t in range(t_max):
            step_logits = inc.step(tokens)
            tokens = step_logits.argmax(axis=-1)
            if t + 1 < t_max:
                dec_in[:, t + 1] = tokens

    tgt_emb = embed_ids(params, cfg, dec_in, dec_pos)
    logits, dec_cache = decoder_forward_cached(
        params, cfg, tgt_emb, memory, src_keep, drop_rng
    )

    valid = np.arange(t_max)[None, :] < steps[:, None]
    weights = np.where(valid, 1.0 / (steps[:, None] * b), 0.0)
    ce, dlogits = _xent(logits, targets, weights)
    per_example = (ce * weights).sum(axis=1) * b
    loss = float(per_example.sum() / b)

    grads: dict[str, np.ndarray] = {}
    d_tgt_emb, dmemory = decoder_backward(dlogits, dec_cache, params, cfg, grads)
    d_src_emb = encoder_backward(dmemory, enc_cache, params, cfg, grads)
    grads["tok_emb"] = embed_ids_bwd(d_tgt_emb, dec_in, cfg, cfg.vocab_size)
    grads["tok_emb"] += embed_ids_bwd(d_src_emb, src_ids, cfg, cfg.vocab_size)
    if want_relu_masks:
        # c_ff sits at a fixed slot of each layer cache; element 1 is pre > 0.
        masks = (enc_cache[3][1].copy(), dec_cache[6][1].copy())
        return loss, grads, per_example, masks
    return loss, grads, per_example


def training_step(
    params: dict[str, np.ndarray],
    adam: AdamState,
    batch: list[Example],
    cfg: ModelConfig,
    rng: np.random.Generator | None,
    vocab: Vocab = DEFAULT_VOCAB,
):
    """One rollout + backprop + Adam update; mutates params and adam in place."""
    loss, grads, per_example = forward_backward(params, cfg, batch, rng, vocab)
    if not np.isfinite(loss):
        bad_rows = np.flatnonzero(~np.isfinite(per_example))
        bad = int(bad_rows[0]) if bad_rows.size else 0
        raise NonFiniteLossError(batch[bad].input_text, float(per_example[bad]))
    adam_step(params, adam, grads)
    return params, adam, loss


GRADCHECK_CONFIG = ModelConfig(
    d_model=16,
    n_heads=2,
    d_ff=32,
    max_positions=48,
    pe_mode=PEMode.SINUSOIDAL,
    max_decode_len=20,
    teacher_forcing=True,
)

_GRADCHECK_BATCH = [
    Example("((21-6)*2)", "15_(21-6)", Task.SUBEXPR, Split.TRAIN),
    Example("(4+5)", "9_(4+5)", Task.SUBEXPR, Split.TRAIN),
]


def gradient_check(
    cfg: ModelConfig | None = None,
    rng: np.random.Generator | None = None,
    coords_per_tensor: int = 4,
    step: float = 1e-3,
    corrupt_tensor: str | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs the teacher-forced loss in float64 on a tiny sinusoidal-PE model so
    the loss is a deterministic function of the parameters.  Coordinates
    whose +/-step interval flips a ReLU activation are skipped: the loss is
    not differentiable there and central differences are meaningless (a
    fresh coordinate is drawn instead).  ``corrupt_tensor`` deliberately
    breaks one analytic gradient, as a negative control for the harness.
    """
    if cfg is None:
        cfg = GRADCHECK_CONFIG
    if not cfg.teacher_forcing or cfg.pe_mode is not PEMode.SINUSOIDAL or cfg.dropout:
        raise ValueError(
            "gradient checking needs teacher forcing, sinusoidal PEs and no dropout"
        )
    if rng is None:
        rng = np.random.default_rng(0)
    params = {
        name: arr.astype(np.float64) for name, arr in init_params(cfg, rng).items()
    }
    batch = _GRADCHECK_BATCH

    def loss_and_masks(p):
        loss, _, _, masks = forward_backward(p, cfg, batch, None, want_relu_masks=True)
        return loss, masks

    _, grads, _ = forward_backward(params, cfg, batch, None)
    if corrupt_tensor is not None:
        if corrupt_tensor not in grads:
            raise ValueError(f"unknown tensor {corrupt_tensor!r}")
        grads[corrupt_tensor] = grads[corrupt_tensor] + 0.5

    max_rel = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        order = rng.permutation(flat.size)
        checked = 0
        for idx in order:
            if checked == min(coords_per_tensor, flat.size):
                break
            orig = flat[idx]
            flat[idx] = orig + step
            loss_plus, masks_plus = loss_and_masks(params)
            flat[idx] = orig - step
            loss_minus, masks_minus = loss_and_masks(params)
            flat[idx] = orig
            if any(
                not np.array_equal(mp, mm) for mp, mm in zip(masks_plus, masks_minus)
            ):
                continue  # kink inside the interval
            checked += 1
            numeric = (loss_plus - loss_minus) / (2 * step)
            analytic = float(grads[name].reshape(-1)[idx])
            rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-8)
            max_rel = max(max_rel, rel)
    return max_rel
