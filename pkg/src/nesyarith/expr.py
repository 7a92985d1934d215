"""Exact representation of chain-form nested arithmetic expressions.

Expressions are binary trees over signed integers with ``+``, ``-`` and ``*``
nodes.  In chain form every node has at most one non-leaf child, so an
expression with at least one operation has a unique innermost sub-expression
that can be solved independently of its context.  All operations here are
pure and the trees are immutable, so everything is safe to share across
threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

OPS = ("+", "-", "*")


class ExprSyntaxError(ValueError):
    """Input string is not a valid expression."""


class NotChainFormError(ExprSyntaxError):
    """Some node of the parsed tree has two non-leaf children."""


class IsLeafError(ValueError):
    """Operation requires at least one operation node, got a bare integer."""


class TargetAbsentError(ValueError):
    """Substitution target does not occur in the text."""


@dataclass(frozen=True)
class Leaf:
    value: int


@dataclass(frozen=True)
class Node:
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown operator {self.op!r}")


Expr = Union[Leaf, Node]


@dataclass(frozen=True)
class InnermostRef:
    """Rendered text of the deepest (leaf, leaf) node and its exact value."""

    subexpr_text: str
    result: int


def parse(text: str, require_chain: bool = True) -> Expr:
    """Parse the canonical text form back into a tree.

    Grammar: ``expr := int | "(" expr op expr ")"`` with ``int := "-"? digit+``
    and no whitespace anywhere.  With ``require_chain`` (the default) a node
    whose children are both non-leaves raises :class:`NotChainFormError`; the
    permissive mode accepts any binary tree, which matters only for strings
    that did not come out of our own generator.
    """
    if not text:
        raise ExprSyntaxError("empty input")

    pos = 0

    def fail(msg: str) -> Exception:
        return ExprSyntaxError(f"{msg} at index {pos} in {text!r}")

    def parse_int() -> Leaf:
        nonlocal pos
        start = pos
        if pos < len(text) and text[pos] == "-":
            pos += 1
        if pos >= len(text) or not text[pos].isdigit():
            raise fail("expected integer")
        while pos < len(text) and text[pos].isdigit():
            pos += 1
        return Leaf(int(text[start:pos]))

    def parse_expr() -> Expr:
        nonlocal pos
        if pos >= len(text):
            raise fail("unexpected end of input")
        ch = text[pos]
        if ch == "(":
            pos += 1
            left = parse_expr()
            if pos >= len(text) or text[pos] not in OPS:
                raise fail("expected operator")
            op = text[pos]
            pos += 1
            right = parse_expr()
            if pos >= len(text) or text[pos] != ")":
                raise fail("expected ')'")
            pos += 1
            if (
                require_chain
                and isinstance(left, Node)
                and isinstance(right, Node)
            ):
                raise NotChainFormError(
                    f"both operands are compound at index {pos} in {text!r}"
                )
            return Node(op, left, right)
        if ch == "-" or ch.isdigit():
            return parse_int()
        raise fail(f"illegal character {ch!r}")

    result = parse_expr()
    if pos != len(text):
        raise ExprSyntaxError(
            f"trailing input at index {pos} in {text!r}"
        )
    return result


def render(e: Expr) -> str:
    """Canonical text: every node parenthesized, no whitespace."""
    if isinstance(e, Leaf):
        return str(e.value)
    return f"({render(e.left)}{e.op}{render(e.right)})"


def evaluate(e: Expr) -> int:
    """Exact signed integer value of the expression."""
    if isinstance(e, Leaf):
        return e.value
    a = evaluate(e.left)
    b = evaluate(e.right)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    return a * b


def nesting_depth(e: Expr) -> int:
    """Number of operations in the tree (= nesting level for chain form)."""
    if isinstance(e, Leaf):
        return 0
    return 1 + nesting_depth(e.left) + nesting_depth(e.right)


def _innermost_node(e: Expr) -> Node:
    """Deepest node with two leaf children; leftmost wins on (non-chain) ties."""
    if isinstance(e, Leaf):
        raise IsLeafError("expression has no operations")

    best: tuple[int, Node] | None = None

    def walk(node: Expr, depth: int) -> None:
        nonlocal best
        if isinstance(node, Leaf):
            return
        if isinstance(node.left, Leaf) and isinstance(node.right, Leaf):
            # Strict > keeps the leftmost of equally deep candidates
            # (pre-order traversal visits left subtrees first).
            if best is None or depth > best[0]:
                best = (depth, node)
            return
        walk(node.left, depth + 1)
        walk(node.right, depth + 1)

    walk(e, 0)
    assert best is not None
    return best[1]


def innermost(e: Expr) -> InnermostRef:
    """Rendered text and value of the unique innermost sub-expression."""
    node = _innermost_node(e)
    return InnermostRef(subexpr_text=render(node), result=evaluate(node))


def solve_step(e: Expr) -> Expr:
    """Replace the innermost node with the leaf holding its value."""
    target = _innermost_node(e)

    def rebuild(node: Expr) -> Expr:
        if node is target:
            return Leaf(evaluate(target))
        if isinstance(node, Leaf):
            return node
        left = rebuild(node.left)
        if left is not node.left:
            return Node(node.op, left, node.right)
        right = rebuild(node.right)
        if right is not node.right:
            return Node(node.op, node.left, right)
        return node

    return rebuild(e)


def solution_chain(e: Expr) -> list[Expr]:
    """All simplification steps from ``e`` down to its final integer value."""
    chain = [e]
    while isinstance(chain[-1], Node):
        chain.append(solve_step(chain[-1]))
    return chain


def substitute_once(text: str, target: str, candidate: str) -> str:
    """Replace the leftmost occurrence of ``target`` in ``text``."""
    if not target:
        raise ValueError("empty substitution target")
    idx = text.find(target)
    if idx < 0:
        raise TargetAbsentError(f"{target!r} does not occur in {text!r}")
    return text[:idx] + candidate + text[idx + len(target):]
