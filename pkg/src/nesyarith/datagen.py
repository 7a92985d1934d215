"""Constrained random generation of chain expressions and tokenization.

Expressions carry exactly one operation per nesting level, operands are
non-negative with a bounded digit count, and every intermediate value along
the solution chain must fit the same digit budget (violations are rejected
by resampling the whole expression, which keeps the accepted distribution
unbiased).  Train/val/test membership is a pure function of the rendered
text via a 64-bit FNV-1a hash, so any process reproduces the same split.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import expr as ex

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


class ExhaustedRetriesError(RuntimeError):
    """Rejection sampling gave up; the generation config is infeasible."""


class UnknownSymbolError(ValueError):
    """Text contains a character outside the vocabulary."""


class Task(enum.Enum):
    SUBEXPR = "SubExpr"
    END_TO_END = "EndToEnd"


class Split(enum.Enum):
    TRAIN = "Train"
    VAL = "Val"
    TEST = "Test"


@dataclass(frozen=True)
class GenConfig:
    nesting: int
    max_operand_digits: int = 2
    max_result_digits: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.nesting < 1:
            raise ValueError("nesting must be >= 1")
        if self.max_operand_digits < 1 or self.max_result_digits < 1:
            raise ValueError("digit budgets must be >= 1")

    @property
    def operand_max(self) -> int:
        return 10**self.max_operand_digits - 1

    @property
    def result_max(self) -> int:
        return 10**self.max_result_digits - 1


@dataclass(frozen=True)
class Vocab:
    """Character alphabet plus sequence markers, ids fixed by list order."""

    symbols: tuple[str, ...]
    sos: int
    eos: int
    pad: int
    _char_to_id: dict[str, int] = field(repr=False, default_factory=dict)

    @staticmethod
    def default() -> "Vocab":
        chars = tuple("0123456789()+-*_") + ("<sos>", "<eos>", "<pad>")
        vocab = Vocab(symbols=chars, sos=16, eos=17, pad=18)
        for i, ch in enumerate(chars[:16]):
            vocab._char_to_id[ch] = i
        return vocab

    def __len__(self) -> int:
        return len(self.symbols)

    def char_id(self, ch: str) -> int:
        try:
            return self._char_to_id[ch]
        except KeyError:
            raise UnknownSymbolError(f"character {ch!r} not in vocabulary") from None


DEFAULT_VOCAB = Vocab.default()


@dataclass(frozen=True)
class Example:
    input_text: str
    target_text: str
    task: Task
    split: Split


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a over the UTF-8 bytes of ``text``."""
    h = FNV64_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * FNV64_PRIME) & _U64
    return h


def assign_split(canonical_text: str, ratios: tuple[int, int, int]) -> Split:
    """Deterministic hash split; identical text maps identically everywhere."""
    if sum(ratios) != 100:
        raise ValueError(f"split ratios must sum to 100, got {ratios}")
    bucket = fnv1a64(canonical_text) % 100
    if bucket < ratios[0]:
        return Split.TRAIN
    if bucket < ratios[0] + ratios[1]:
        return Split.VAL
    return Split.TEST


def _apply_op(code: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # int64 is ample: dead attempts freeze at their first out-of-range value,
    # so no operand here ever exceeds a few thousand in magnitude.
    return np.where(code == 0, a + b, np.where(code == 1, a - b, a * b))


def sample_expression(
    rng: np.random.Generator,
    cfg: GenConfig,
    max_retries: int = 10_000,
) -> ex.Expr:
    """Sample a chain expression with exactly ``cfg.nesting`` operations.

    Operators and the side of the nested child are uniform, leaves are
    uniform in ``[0, operand_max]``, and every value along the solution chain
    must stay within ``[-result_max, result_max]``.  Attempts are drawn in
    vectorized blocks; the first fully valid attempt is returned, which is
    distribution-identical to rejecting whole expressions one at a time.
    """
    k = cfg.nesting
    lo, hi = 0, cfg.operand_max + 1
    bound = cfg.result_max
    used = 0
    block = 64
    while used < max_retries:
        n = min(block, max_retries - used)
        used += n
        block = min(block * 4, 8192)

        ops = rng.integers(0, 3, size=(n, k))
        leaves = rng.integers(lo, hi, size=(n, k + 1))
        sides = rng.integers(0, 2, size=(n, k - 1)) if k > 1 else None

        values = _apply_op(ops[:, 0], leaves[:, 0], leaves[:, 1])
        alive = np.abs(values) <= bound
        for level in range(1, k):
            extra = leaves[:, level + 1]
            on_left = sides[:, level - 1] == 0
            a = np.where(on_left, values, extra)
            b = np.where(on_left, extra, values)
            values = np.where(alive, _apply_op(ops[:, level], a, b), values)
            alive &= np.abs(values) <= bound

        winners = np.nonzero(alive)[0]
        if winners.size == 0:
            continue
        w = int(winners[0])

        tree: ex.Expr = ex.Node(
            ex.OPS[ops[w, 0]], ex.Leaf(int(leaves[w, 0])), ex.Leaf(int(leaves[w, 1]))
        )
        for level in range(1, k):
            leaf = ex.Leaf(int(leaves[w, level + 1]))
            op = ex.OPS[ops[w, level]]
            if sides[w, level - 1] == 0:
                tree = ex.Node(op, tree, leaf)
            else:
                tree = ex.Node(op, leaf, tree)
        return tree

    raise ExhaustedRetriesError(
        f"no valid expression with nesting={k} after {max_retries} attempts"
    )


def make_example(e: ex.Expr, task: Task, split: Split) -> Example:
    input_text = ex.render(e)
    if task is Task.SUBEXPR:
        ref = ex.innermost(e)
        target = f"{ref.result}_{ref.subexpr_text}"
    else:
        target = str(ex.evaluate(e))
    return Example(input_text=input_text, target_text=target, task=task, split=split)


@dataclass(frozen=True)
class TrainingPool:
    """Complete solution paths forced into the train split.

    ``reserved`` holds the rendered texts of every chain element so that the
    hash-based splitter never hands the same expression to val or test.
    """

    examples: tuple[Example, ...]
    reserved: frozenset[str]


def build_training_pool(
    rng: np.random.Generator,
    n_roots: int,
    cfg: GenConfig | None = None,
    max_retries: int = 10_000,
) -> TrainingPool:
    """Sample ``n_roots`` nesting-2 expressions and emit both chain steps."""
    if cfg is None:
        cfg = GenConfig(nesting=2)
    elif cfg.nesting != 2:
        cfg = GenConfig(
            nesting=2,
            max_operand_digits=cfg.max_operand_digits,
            max_result_digits=cfg.max_result_digits,
            seed=cfg.seed,
        )
    examples: list[Example] = []
    reserved: set[str] = set()
    for _ in range(n_roots):
        root = sample_expression(rng, cfg, max_retries=max_retries)
        for step in (root, ex.solve_step(root)):
            examples.append(make_example(step, Task.SUBEXPR, Split.TRAIN))
            reserved.add(ex.render(step))
    return TrainingPool(examples=tuple(examples), reserved=frozenset(reserved))


def sample_batch(
    rng: np.random.Generator,
    task: Task,
    nesting_set: Sequence[int],
    batch_size: int,
    split: Split,
    ratios: tuple[int, int, int] = (80, 10, 10),
    reserved: frozenset[str] = frozenset(),
    gen_cfg: GenConfig | None = None,
    max_retries: int = 10_000,
) -> list[Example]:
    """On-the-fly batch whose inputs all hash into the requested split.

    Expressions are resampled until the hash agrees; val/test batches also
    refuse texts reserved for the training pool.  Training batches may only
    use nesting levels 1 and 2.
    """
    if not nesting_set:
        raise ValueError("nesting_set must be non-empty")
    if split is Split.TRAIN and not set(nesting_set) <= {1, 2}:
        raise ValueError(f"train batches are limited to nesting 1-2, got {sorted(nesting_set)}")

    base = gen_cfg if gen_cfg is not None else GenConfig(nesting=1)
    cfg_by_nesting = {
        n: GenConfig(
            nesting=n,
            max_operand_digits=base.max_operand_digits,
            max_result_digits=base.max_result_digits,
            seed=base.seed,
        )
        for n in nesting_set
    }
    nesting_choices = list(nesting_set)

    out: list[Example] = []
    attempts = 0
    while len(out) < batch_size:
        attempts += 1
        if attempts > max_retries * batch_size:
            raise ExhaustedRetriesError(
                f"could not fill a {split.value} batch after {attempts} attempts"
            )
        nesting = nesting_choices[int(rng.integers(0, len(nesting_choices)))]
        e = sample_expression(rng, cfg_by_nesting[nesting], max_retries=max_retries)
        text = ex.render(e)
        if assign_split(text, ratios) is not split:
            continue
        if split is not Split.TRAIN and text in reserved:
            continue
        out.append(make_example(e, task, split))
    return out


def encode(text: str, vocab: Vocab = DEFAULT_VOCAB) -> list[int]:
    """Token ids with SOS prepended and EOS appended."""
    return [vocab.sos] + [vocab.char_id(ch) for ch in text] + [vocab.eos]


def decode(ids: Iterable[int], vocab: Vocab = DEFAULT_VOCAB) -> str:
    """Inverse of :func:`encode`: drop markers, stop at the first EOS."""
    chars: list[str] = []
    for i in ids:
        i = int(i)
        if i == vocab.eos:
            break
        if i == vocab.sos or i == vocab.pad:
            continue
        if not 0 <= i < len(vocab.symbols) - 3:
            raise UnknownSymbolError(f"id {i} is not a character token")
        chars.append(vocab.symbols[i])
    return "".join(chars)


def example_to_tsv(example: Example) -> str:
    return "\t".join(
        (example.input_text, example.target_text, example.task.value, example.split.value)
    )


def write_dataset(path: str, examples: Iterable[Example]) -> int:
    """One example per line: ``input\\ttarget\\ttask\\tsplit`` (UTF-8)."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for exm in examples:
            fh.write(example_to_tsv(exm))
            fh.write("\n")
            count += 1
    return count
