"""Independent oracles the tests check the library against.

These deliberately avoid the library's own code paths: expression values
come from Python's evaluator, innermost sub-expressions from a regex scan,
the split hash from a reduce-style FNV, and combiner outcomes from a direct
count-and-filter enumeration.
"""

from __future__ import annotations

import re
from collections import Counter
from functools import reduce

INNER_RE = re.compile(r"\((-?\d+)([+*-])(-?\d+)\)")
CANDIDATE_ORACLE_RE = re.compile(r"^-?\d{1,3}_\(-?\d{1,3}[-+*]-?\d{1,3}\)$")


def eval_text(text: str) -> int:
    """Evaluate via Python itself; the grammar is a Python subset."""
    return eval(text, {"__builtins__": {}}, {})  # noqa: S307 - test oracle


def innermost_by_regex(text: str) -> tuple[str, int]:
    """The unique (leaf op leaf) in a chain-form string, plus its value."""
    matches = INNER_RE.findall(text)
    spans = [m.group(0) for m in INNER_RE.finditer(text)]
    assert len(matches) == 1, f"expected one innermost in {text!r}, got {spans}"
    a, op, b = matches[0]
    a, b = int(a), int(b)
    value = a + b if op == "+" else (a - b if op == "-" else a * b)
    return spans[0], value


def fnv1a64_reference(text: str) -> int:
    """Same FNV-1a spec, written as a reduce for independence."""
    return reduce(
        lambda h, byte: ((h ^ byte) * 0x100000001B3) % 2**64,
        text.encode("utf-8"),
        0xCBF29CE484222325,
    )


def combiner_oracle(input_text: str, candidates: list[str], alt: bool):
    """Count-and-filter reference for both combiner orderings.

    Returns ("next", text) or ("halted", reason-string).
    """

    def well_formed(raw: str) -> bool:
        return CANDIDATE_ORACLE_RE.match(raw) is not None

    def most_frequent(raws: list[str]) -> str:
        counts = Counter(raws)
        best = max(counts.values())
        return sorted(raw for raw, c in counts.items() if c == best)[0]

    def substitute(raw: str) -> str:
        result, target = raw.split("_", 1)
        i = input_text.index(target)
        return input_text[:i] + result + input_text[i + len(target):]

    if alt:
        winner = most_frequent(candidates)
        if not well_formed(winner):
            return ("halted", "ModalIllFormed")
        if winner.split("_", 1)[1] not in input_text:
            return ("halted", "TargetAbsent")
        return ("next", substitute(winner))
    survivors = [
        raw
        for raw in candidates
        if well_formed(raw) and raw.split("_", 1)[1] in input_text
    ]
    if not survivors:
        return ("halted", "NoWellFormed")
    return ("next", substitute(most_frequent(survivors)))


def multisets_of(items: list[str], max_size: int):
    """All multisets (as tuples) of the given items, sizes 1..max_size."""
    from itertools import combinations_with_replacement

    out = []
    for size in range(1, max_size + 1):
        out.extend(combinations_with_replacement(items, size))
    return out
