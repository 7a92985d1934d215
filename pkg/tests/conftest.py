import os
import sys

import numpy as np
import pytest
from hypothesis import strategies as st

sys.path.insert(0, os.path.dirname(__file__))

from nesyarith import expr as ex


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def chain_exprs(max_nesting: int = 6, leaf_min: int = -99, leaf_max: int = 99):
    """Hypothesis strategy for chain-form expression trees."""
    leaves = st.integers(leaf_min, leaf_max).map(ex.Leaf)
    ops = st.sampled_from(ex.OPS)

    def wrap(inner):
        return st.tuples(ops, leaves, st.booleans(), inner).map(
            lambda t: ex.Node(t[0], t[3], t[1]) if t[2] else ex.Node(t[0], t[1], t[3])
        )

    base = st.tuples(ops, leaves, leaves).map(lambda t: ex.Node(t[0], t[1], t[2]))
    strat = base
    for _ in range(max_nesting - 1):
        strat = st.one_of(base, wrap(strat))
    return strat
