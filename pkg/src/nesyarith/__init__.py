"""Neuro-symbolic solver for nested arithmetic expressions.

A trained sub-expression solver proposes ``result_target`` substitutions,
a deterministic combiner filters and votes over them, and the loop repeats
on its own output until only an integer remains.
"""

from . import combiner, config, datagen, evalharness, expr, hybrid, llm, neural

__version__ = "0.1.0"

__all__ = [
    "combiner",
    "config",
    "datagen",
    "evalharness",
    "expr",
    "hybrid",
    "llm",
    "neural",
    "__version__",
]
