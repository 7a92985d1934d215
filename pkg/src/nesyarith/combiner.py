"""Deterministic post-processing of solver candidates.

A candidate is usable when it spells ``<int>_<(int op int)>`` exactly.  The
default pipeline filters usable candidates first and votes afterwards; the
alternative pipeline votes over everything and only then checks the winner,
which halts strictly more often.  Both are pure functions of the input text
and the candidate multiset, independent of candidate order.
"""

from __future__ import annotations

import enum
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional

from .expr import substitute_once

# Integers allow a sign and up to three digits so that out-of-range solver
# mistakes (e.g. "-100") are still votable; range policing belongs to the
# data generator, not here.
_CANDIDATE_RE = re.compile(
    r"\A(-?\d{1,3})_(\(-?\d{1,3}[+\-*]-?\d{1,3}\))\Z"
)


class HaltReason(enum.Enum):
    NO_WELL_FORMED = "NoWellFormed"
    MODAL_ILL_FORMED = "ModalIllFormed"
    TARGET_ABSENT = "TargetAbsent"


@dataclass(frozen=True)
class ParsedCandidate:
    result_text: str
    target_text: str


@dataclass(frozen=True)
class SolverCandidate:
    raw: str
    parsed: Optional[ParsedCandidate]

    @property
    def well_formed(self) -> bool:
        return self.parsed is not None


@dataclass(frozen=True)
class Next:
    text: str


@dataclass(frozen=True)
class Halted:
    reason: HaltReason


CombineOutcome = Next | Halted


def parse_candidate(raw: str) -> SolverCandidate:
    """Classify a raw solver output; ill-formedness is a value, not an error."""
    m = _CANDIDATE_RE.match(raw)
    if m is None:
        return SolverCandidate(raw=raw, parsed=None)
    return SolverCandidate(
        raw=raw, parsed=ParsedCandidate(result_text=m.group(1), target_text=m.group(2))
    )


def modal_raw(raws: Iterable[str]) -> str:
    """Most frequent string; ties go to the lexicographically smallest."""
    counts = Counter(raws)
    if not counts:
        raise ValueError("candidates must be non-empty")
    return min(counts, key=lambda raw: (-counts[raw], raw))


def usable_candidates(input_text: str, candidates: Iterable[str]) -> list[str]:
    """Candidates that are well-formed and whose target occurs in the input."""
    out = []
    for raw in candidates:
        cand = parse_candidate(raw)
        if cand.parsed is not None and cand.parsed.target_text in input_text:
            out.append(raw)
    return out


def combine_default(input_text: str, candidates: Iterable[str]) -> CombineOutcome:
    """Filter usable candidates, then vote, then substitute.

    Usable means well-formed with a target that actually occurs in the input;
    arithmetic correctness is never checked, so a popular wrong result wins.
    """
    survivors = usable_candidates(input_text, candidates)
    if not survivors:
        return Halted(HaltReason.NO_WELL_FORMED)
    winner = parse_candidate(modal_raw(survivors))
    assert winner.parsed is not None
    return Next(
        substitute_once(input_text, winner.parsed.target_text, winner.parsed.result_text)
    )


def combine_alt(input_text: str, candidates: Iterable[str]) -> CombineOutcome:
    """Vote over all candidates first, then check the winner."""
    winner = parse_candidate(modal_raw(candidates))
    if winner.parsed is None:
        return Halted(HaltReason.MODAL_ILL_FORMED)
    if winner.parsed.target_text not in input_text:
        return Halted(HaltReason.TARGET_ABSENT)
    return Next(
        substitute_once(input_text, winner.parsed.target_text, winner.parsed.result_text)
    )
