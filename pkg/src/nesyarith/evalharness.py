"""Metrics and batched evaluation over nesting levels, plus report emission.

Character accuracy is position-wise agreement over the longer of the two
strings, so truncation and overgeneration are penalized symmetrically.
Sequence accuracy is exact match.  A halted run scores zero on both.  Batch
statistics are macro-averaged: mean over sequences within a batch, then
mean and (population) standard deviation across batches.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Optional, Sequence

import numpy as np

from . import datagen as dg
from .combiner import modal_raw, usable_candidates
from .hybrid import CombinerVariant, Halted, Solved, SolverPort, run_hybrid
from .neural.decoding import generate, generate_multi
from .neural.params import ModelConfig


@dataclass(frozen=True)
class EvalRecord:
    condition: str
    nesting: int
    char_acc_mean: float
    char_acc_std: float
    seq_acc_mean: float
    seq_acc_std: float
    halted_mean: float
    halted_std: float
    n_batches: int
    batch_size: int


def char_accuracy(output: Optional[str], target: str) -> float:
    """Fraction of matching positions over max(len(output), len(target))."""
    if not target:
        raise ValueError("target must be non-empty")
    if output is None:  # halted
        return 0.0
    denom = max(len(output), len(target))
    matches = sum(1 for a, b in zip(output, target) if a == b)
    return matches / denom


def seq_accuracy(output: Optional[str], target: str) -> int:
    """1 iff the output matches the target exactly; halted counts as 0."""
    if output is None:
        return 0
    return int(output == target)


def _aggregate(
    condition: str,
    nesting: int,
    batch_stats: list[tuple[float, float, float]],
    batch_size: int,
) -> EvalRecord:
    arr = np.asarray(batch_stats, dtype=np.float64) * 100.0
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)
    return EvalRecord(
        condition=condition,
        nesting=nesting,
        char_acc_mean=float(mean[0]),
        char_acc_std=float(std[0]),
        seq_acc_mean=float(mean[1]),
        seq_acc_std=float(std[1]),
        halted_mean=float(mean[2]),
        halted_std=float(std[2]),
        n_batches=len(batch_stats),
        batch_size=batch_size,
    )


def _score_batch(
    outputs: Sequence[Optional[str]], targets: Sequence[str]
) -> tuple[float, float, float]:
    chars = [char_accuracy(o, t) for o, t in zip(outputs, targets)]
    seqs = [seq_accuracy(o, t) for o, t in zip(outputs, targets)]
    halted = [1.0 if o is None else 0.0 for o in outputs]
    n = len(targets)
    return sum(chars) / n, sum(seqs) / n, sum(halted) / n


def evaluate_solver(
    params: dict[str, np.ndarray] | None,
    cfg: ModelConfig | None,
    nesting_list: Sequence[int],
    n_batches: int = 10,
    batch_size: int = 100,
    rng: np.random.Generator | None = None,
    *,
    multi: bool = False,
    n_outputs: int = 100,
    task: dg.Task = dg.Task.SUBEXPR,
    ratios: tuple[int, int, int] = (80, 10, 10),
    reserved: frozenset[str] = frozenset(),
    gen_cfg: dg.GenConfig | None = None,
    condition: str = "solver",
    dump: list | None = None,
    solve_fn=None,
) -> list[EvalRecord]:
    """Score the solver alone on test-split batches at each nesting level.

    Single-output mode decodes greedily; multi mode draws ``n_outputs``
    samples and applies the combiner's filter-then-vote rule, halting when
    nothing usable survives.  ``solve_fn`` (input_text -> output or None)
    replaces the model entirely, for mock-solver tests.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    records = []
    for nesting in nesting_list:
        stats = []
        for batch_idx in range(n_batches):
            batch = dg.sample_batch(
                rng, task, [nesting], batch_size, dg.Split.TEST,
                ratios=ratios, reserved=reserved, gen_cfg=gen_cfg,
            )
            outputs: list[Optional[str]] = []
            for exm in batch:
                if solve_fn is not None:
                    outputs.append(solve_fn(exm.input_text))
                elif multi:
                    cands = generate_multi(params, cfg, exm.input_text, n_outputs, rng)
                    usable = usable_candidates(exm.input_text, cands)
                    outputs.append(modal_raw(usable) if usable else None)
                else:
                    outputs.append(generate(params, cfg, exm.input_text, "greedy", rng))
            stats.append(_score_batch(outputs, [e.target_text for e in batch]))
            if dump is not None:
                for exm, out in zip(batch, outputs):
                    dump.append(
                        {
                            "condition": condition,
                            "nesting": nesting,
                            "batch": batch_idx,
                            "input": exm.input_text,
                            "target": exm.target_text,
                            "output": out,
                        }
                    )
        records.append(_aggregate(condition, nesting, stats, batch_size))
    return records


def evaluate_hybrid(
    solver: SolverPort,
    variant: CombinerVariant,
    nesting_list: Sequence[int],
    n_batches: int = 10,
    batch_size: int = 100,
    rng: np.random.Generator | None = None,
    *,
    n_outputs: int = 100,
    ratios: tuple[int, int, int] = (80, 10, 10),
    reserved: frozenset[str] = frozenset(),
    gen_cfg: dg.GenConfig | None = None,
    condition: str = "hybrid",
    traces: list | None = None,
    dump: list | None = None,
) -> list[EvalRecord]:
    """Score the full iterative system on expression resolution.

    Targets are the final values; a run that halts (or, defensively, hits
    the iteration cap) counts as fully wrong and adds to the halted rate.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    records = []
    for nesting in nesting_list:
        stats = []
        for batch_idx in range(n_batches):
            batch = dg.sample_batch(
                rng, dg.Task.END_TO_END, [nesting], batch_size, dg.Split.TEST,
                ratios=ratios, reserved=reserved, gen_cfg=gen_cfg,
            )
            outputs = []
            for exm in batch:
                trace = run_hybrid(
                    solver, variant, exm.input_text, n_outputs, rng,
                    collect_steps=traces is not None,
                )
                if traces is not None:
                    traces.append(trace)
                out = str(trace.outcome.value) if isinstance(trace.outcome, Solved) else None
                outputs.append(out)
                if dump is not None:
                    dump.append(
                        {
                            "condition": condition,
                            "nesting": nesting,
                            "batch": batch_idx,
                            "input": exm.input_text,
                            "target": exm.target_text,
                            "output": out,
                            "halted": (
                                trace.outcome.reason.value
                                if isinstance(trace.outcome, Halted)
                                else None
                            ),
                        }
                    )
            stats.append(_score_batch(outputs, [e.target_text for e in batch]))
        records.append(_aggregate(condition, nesting, stats, batch_size))
    return records


def round1(value: float) -> str:
    """One decimal place, ties rounded away from zero (94.95 -> '95.0')."""
    return str(Decimal(repr(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _cell(mean: float, std: float) -> str:
    return f"{round1(mean)}±{round1(std)}"


def emit_report(records: Sequence[EvalRecord], format: str = "csv") -> str:
    """Render records as CSV rows or paper-style markdown tables."""
    if format == "csv":
        lines = ["condition,nesting,char_mean,char_std,seq_mean,seq_std,halted_mean,halted_std"]
        for r in records:
            lines.append(
                f"{r.condition},{r.nesting},{round1(r.char_acc_mean)},{round1(r.char_acc_std)},"
                f"{round1(r.seq_acc_mean)},{round1(r.seq_acc_std)},"
                f"{round1(r.halted_mean)},{round1(r.halted_std)}"
            )
        return "\n".join(lines) + "\n"
    if format != "markdown":
        raise ValueError(f"unknown report format {format!r}")

    nestings = sorted({r.nesting for r in records})
    conditions = list(dict.fromkeys(r.condition for r in records))
    by_key = {(r.condition, r.nesting): r for r in records}
    metrics = [
        ("Char Acc", lambda r: _cell(r.char_acc_mean, r.char_acc_std)),
        ("Seq Acc", lambda r: _cell(r.seq_acc_mean, r.seq_acc_std)),
        ("Halted", lambda r: _cell(r.halted_mean, r.halted_std)),
    ]
    lines = []
    for title, cell in metrics:
        lines.append(f"### {title}")
        lines.append("| Condition | " + " | ".join(str(n) for n in nestings) + " |")
        lines.append("|---" * (len(nestings) + 1) + "|")
        for cond in conditions:
            row = [cond]
            for n in nestings:
                r = by_key.get((cond, n))
                row.append(cell(r) if r is not None else "-")
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")
    return "\n".join(lines)


def write_sequence_dump(path: str, rows: Iterable[dict]) -> None:
    """Newline-delimited JSON, one evaluated sequence per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")))
            fh.write("\n")
