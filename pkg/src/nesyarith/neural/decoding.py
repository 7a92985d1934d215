"""Greedy and sampled autoregressive decoding, including multi-output mode.

Multi-output generation embeds the input once (one label-position draw for
the encoder), replicates the memory N ways and decodes all N samples as one
batch; each sample owns an independent decoder position draw, exactly like
N separate generations would.
"""

from __future__ import annotations

import numpy as np

from ..datagen import DEFAULT_VOCAB, Vocab, decode, encode
from .net import IncrementalDecoder, embed_ids, encoder_forward_cached
from .params import ModelConfig, PEMode
from .positional import positions_for


def _decoder_positions(
    rng: np.random.Generator | None, cfg: ModelConfig, rows: int
) -> np.ndarray:
    """One position draw per generated sequence, covering max_decode_len steps."""
    return np.stack(
        [positions_for(rng, cfg.max_decode_len, cfg) for _ in range(rows)]
    )


def _sample_rows(probs64: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs64, axis=-1)
    u = rng.random(probs64.shape[0])
    tokens = (cdf < u[:, None]).sum(axis=-1)
    return np.minimum(tokens, probs64.shape[-1] - 1)


def _decode_batch(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    input_text: str,
    rows: int,
    rng: np.random.Generator | None,
    sample: bool,
    temperature: float,
    vocab: Vocab,
) -> list[str]:
    src_ids = np.asarray(encode(input_text, vocab))[None, :]
    src_pos = positions_for(rng, src_ids.shape[1], cfg)[None, :]
    src_emb = embed_ids(params, cfg, src_ids, src_pos)
    memory, _ = encoder_forward_cached(params, cfg, src_emb)
    if rows > 1:
        memory = np.repeat(memory, rows, axis=0)

    dec_pos = _decoder_positions(rng, cfg, rows)
    inc = IncrementalDecoder(params, cfg, memory, dec_pos)
    tokens = np.full(rows, vocab.sos, dtype=np.int64)
    emitted = np.empty((rows, cfg.max_decode_len), dtype=np.int64)
    done = np.zeros(rows, dtype=bool)
    steps = 0
    for t in range(cfg.max_decode_len):
        logits = inc.step(tokens)
        if sample:
            scaled = logits.astype(np.float64) / temperature
            scaled -= scaled.max(axis=-1, keepdims=True)
            probs = np.exp(scaled)
            probs /= probs.sum(axis=-1, keepdims=True)
            tokens = _sample_rows(probs, rng)
        else:
            tokens = logits.argmax(axis=-1)
        emitted[:, t] = tokens
        steps = t + 1
        done |= tokens == vocab.eos
        if done.all():
            break
    return [decode(emitted[r, :steps], vocab) for r in range(rows)]


def generate(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    input_text: str,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
    temperature: float = 1.0,
    vocab: Vocab = DEFAULT_VOCAB,
) -> str:
    """One autoregressive decode; stops at EOS or after max_decode_len steps.

    Malformed output is data for the combiner to judge, never an error here.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    if mode == "sample":
        if rng is None:
            raise ValueError("sampled decoding needs an RNG")
        if temperature <= 0:
            raise ValueError("temperature must be positive")
    if cfg.pe_mode is PEMode.LABEL and rng is None:
        raise ValueError("label positional encodings need an RNG")
    return _decode_batch(
        params, cfg, input_text, 1, rng, mode == "sample", temperature, vocab
    )[0]


def generate_multi(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    input_text: str,
    n: int,
    rng: np.random.Generator,
    temperature: float = 1.0,
    vocab: Vocab = DEFAULT_VOCAB,
) -> list[str]:
    """N independent temperature-1 samples for the same input."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _decode_batch(params, cfg, input_text, n, rng, True, temperature, vocab)


def make_neural_port(params: dict[str, np.ndarray], cfg: ModelConfig):
    """Adapt a trained model to the hybrid loop's solver port."""

    def port(input_text: str, n: int, rng: np.random.Generator) -> list[str]:
        return generate_multi(params, cfg, input_text, n, rng)

    return port
