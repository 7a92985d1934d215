"""The iterative solve loop: combiner(text, solver(text)) until a bare integer.

The solver side is a port: anything that maps (input_text, n, rng) to a list
of n candidate strings fits, which covers the trained network, the exact
oracle, and noisy oracles used for Monte-Carlo studies of halting behavior.
Each run owns its RNG stream, so independent runs parallelize trivially.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expr as ex
from .combiner import (
    HaltReason,
    Halted,
    Next,
    SolverCandidate,
    combine_alt,
    combine_default,
    modal_raw,
    parse_candidate,
    usable_candidates,
)

# A solver port takes (input_text, n, rng) and returns exactly n candidates.
SolverPort = Callable[[str, int, np.random.Generator], list[str]]

_BARE_INT_RE = re.compile(r"\A-?\d+\Z")


class MalformedInitialInputError(ValueError):
    """The starting text does not parse even permissively."""


class CombinerVariant(enum.Enum):
    DEFAULT = "default"
    ALT = "alt"


@dataclass(frozen=True)
class OracleErrorModel:
    """Independent per-candidate corruption probabilities for the oracle."""

    p_malformed: float = 0.0
    p_wrong_result: float = 0.0
    p_wrong_target: float = 0.0
    result_noise_range: int = 3

    def __post_init__(self):
        for p in (self.p_malformed, self.p_wrong_result, self.p_wrong_target):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        if self.result_noise_range < 1:
            raise ValueError("result_noise_range must be >= 1")


EXACT_ORACLE = OracleErrorModel()

_APPEND_CHARS = "0123456789()+-*_"


def oracle_solve(
    input_text: str,
    n: int,
    rng: np.random.Generator,
    model: OracleErrorModel = EXACT_ORACLE,
) -> list[str]:
    """Ground-truth solver with optional independent per-candidate noise.

    Each candidate independently gets a wrong result (uniform nonzero offset
    within the noise range), a wrong-but-well-formed absent target, and/or a
    syntax corruption (drop the underscore or append a random character).
    Noise draws are vectorized; Monte-Carlo sweeps hammer this path.
    """
    tree = ex.parse(input_text, require_chain=False)
    ref = ex.innermost(tree)  # raises IsLeafError on bare integers

    results = np.full(n, ref.result, dtype=np.int64)
    if model.p_wrong_result:
        hit = np.flatnonzero(rng.random(n) < model.p_wrong_result)
        if hit.size:
            magnitude = rng.integers(1, model.result_noise_range + 1, size=hit.size)
            sign = rng.integers(0, 2, size=hit.size) * 2 - 1
            results[hit] += magnitude * sign

    targets = [ref.subexpr_text] * n
    if model.p_wrong_target:
        for i in np.flatnonzero(rng.random(n) < model.p_wrong_target):
            targets[i] = _absent_subexpr(input_text, rng)

    out = [f"{results[i]}_{targets[i]}" for i in range(n)]
    if model.p_malformed:
        hit = np.flatnonzero(rng.random(n) < model.p_malformed)
        if hit.size:
            drop_underscore = rng.integers(0, 2, size=hit.size) == 0
            chars = rng.integers(0, len(_APPEND_CHARS), size=hit.size)
            for j, i in enumerate(hit):
                if drop_underscore[j]:
                    out[i] = out[i].replace("_", "", 1)
                else:
                    out[i] = out[i] + _APPEND_CHARS[chars[j]]
    return out


def _absent_subexpr(input_text: str, rng: np.random.Generator) -> str:
    while True:
        a = int(rng.integers(0, 100))
        b = int(rng.integers(0, 100))
        op = ex.OPS[int(rng.integers(0, 3))]
        text = f"({a}{op}{b})"
        if text not in input_text:
            return text


def make_oracle_port(model: OracleErrorModel = EXACT_ORACLE) -> SolverPort:
    def port(input_text: str, n: int, rng: np.random.Generator) -> list[str]:
        return oracle_solve(input_text, n, rng, model)

    return port


@dataclass(frozen=True)
class Solved:
    value: int


@dataclass(frozen=True)
class IterationCapHit:
    pass


Outcome = Solved | Halted | IterationCapHit


@dataclass(frozen=True)
class StepRecord:
    input_text: str
    n_wellformed: int
    chosen: Optional[SolverCandidate]
    output_text: Optional[str]


@dataclass(frozen=True)
class HybridTrace:
    steps: tuple[StepRecord, ...]
    outcome: Outcome

    def to_json(self) -> str:
        """One-line JSON record for newline-delimited trace dumps."""
        if isinstance(self.outcome, Solved):
            outcome = {"kind": "solved", "value": self.outcome.value}
        elif isinstance(self.outcome, Halted):
            outcome = {"kind": "halted", "reason": self.outcome.reason.value}
        else:
            outcome = {"kind": "iteration_cap_hit"}
        return json.dumps(
            {
                "steps": [
                    {
                        "input_text": s.input_text,
                        "n_wellformed": s.n_wellformed,
                        "chosen": s.chosen.raw if s.chosen is not None else None,
                        "output_text": s.output_text,
                    }
                    for s in self.steps
                ],
                "outcome": outcome,
            },
            separators=(",", ":"),
        )


def run_hybrid(
    solver: SolverPort,
    variant: CombinerVariant,
    expr_text: str,
    n_outputs: int,
    rng: np.random.Generator,
    max_iters: int | None = None,
    collect_steps: bool = True,
) -> HybridTrace:
    """Iterate hybrid(text) = combiner(text, solver(text)) until done.

    Stops as soon as the text is a bare (possibly negative) integer.  The
    iteration cap defaults to the initial operation count plus two; each
    substitution strictly shortens the text, so the cap is pure
    defense-in-depth for non-chain inputs accepted by the permissive parser.
    """
    if n_outputs < 1:
        raise ValueError("n_outputs must be >= 1")
    try:
        tree = ex.parse(expr_text, require_chain=False)
    except ex.ExprSyntaxError as err:
        raise MalformedInitialInputError(str(err)) from err
    if max_iters is None:
        max_iters = ex.nesting_depth(tree) + 2
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    combine = combine_default if variant is CombinerVariant.DEFAULT else combine_alt

    steps: list[StepRecord] = []
    text = expr_text
    for _ in range(max_iters):
        if _BARE_INT_RE.match(text):
            return HybridTrace(steps=tuple(steps), outcome=Solved(int(text)))
        candidates = solver(text, n_outputs, rng)
        outcome = combine(text, candidates)
        if collect_steps:
            parsed = [parse_candidate(raw) for raw in candidates]
            n_wellformed = sum(1 for c in parsed if c.well_formed)
            chosen, output_text = _describe_step(text, candidates, outcome, variant)
            steps.append(
                StepRecord(
                    input_text=text,
                    n_wellformed=n_wellformed,
                    chosen=chosen,
                    output_text=output_text,
                )
            )
        if isinstance(outcome, Halted):
            return HybridTrace(steps=tuple(steps), outcome=outcome)
        text = outcome.text
    if _BARE_INT_RE.match(text):
        return HybridTrace(steps=tuple(steps), outcome=Solved(int(text)))
    return HybridTrace(steps=tuple(steps), outcome=IterationCapHit())


def _describe_step(
    text: str,
    candidates: list[str],
    outcome: Next | Halted,
    variant: CombinerVariant,
) -> tuple[Optional[SolverCandidate], Optional[str]]:
    """Reconstruct which candidate the combiner acted on, for the trace."""
    if isinstance(outcome, Next):
        if variant is CombinerVariant.DEFAULT:
            pool = usable_candidates(text, candidates)
        else:
            pool = list(candidates)
        return parse_candidate(modal_raw(pool)), outcome.text
    if outcome.reason is HaltReason.NO_WELL_FORMED:
        return None, None
    return parse_candidate(modal_raw(candidates)), None


def write_traces(path: str, traces: list[HybridTrace]) -> None:
    """Newline-delimited JSON dump of hybrid runs."""
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(trace.to_json())
            fh.write("\n")
