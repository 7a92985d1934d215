"""Sinusoidal table and label position sampling.

Label positional encodings pick k sorted distinct rows of the sinusoidal
table instead of the first k rows, which is what lets the model extrapolate
to sequence lengths it never saw: absolute positions carry no meaning, only
their order does.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .params import ModelConfig, PEMode


class KTooLargeError(ValueError):
    """Asked for more distinct positions than the table has rows."""


class SequenceTooLongError(ValueError):
    """Sequence does not fit below max_positions."""


@lru_cache(maxsize=8)
def _sinusoidal_cached(m: int, d_model: int) -> np.ndarray:
    pos = np.arange(m, dtype=np.float64)[:, None]
    even = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, even / d_model)
    table = np.empty((m, d_model), dtype=np.float32)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    table.setflags(write=False)
    return table

def sinusoidal_table(m: int, d_model: int) -> np.ndarray:
    """(m, d_model) table: row p holds sin/cos of p / 10000^(2i/d_model).

    The returned array is a shared read-only cache; copy before mutating.
    """
    if d_model % 2 != 0:
        raise ValueError("d_model must be even")
    return _sinusoidal_cached(m, d_model)


def label_positions(rng: np.random.Generator, k: int, m: int) -> np.ndarray:
    """k distinct integers from [0, m), ascending; fresh draw per call."""
    if k > m:
        raise KTooLargeError(f"cannot draw {k} distinct positions from [0, {m})")
    pos = rng.choice(m, size=k, replace=False)
    pos.sort()
    return pos


def positions_for(
    rng: np.random.Generator | None, k: int, cfg: ModelConfig
) -> np.ndarray:
    """Row indices into the sinusoidal table for a length-k sequence."""
    if k > cfg.max_positions:
        raise SequenceTooLongError(
            f"sequence of length {k} exceeds max_positions={cfg.max_positions}"
        )
    if cfg.pe_mode is PEMode.SINUSOIDAL:
        return np.arange(k)
    if rng is None:
        raise ValueError("label positional encodings need an RNG")
    return label_positions(rng, k, cfg.max_positions)
