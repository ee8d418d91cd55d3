import numpy
import pytest

import stmiss


@pytest.fixture(name="rng")
def rng_fixture():
    return numpy.random.default_rng(20201019)


@pytest.fixture(name="binary_tree")
def binary_tree_fixture():
    """Two binary variables, seven vertices, four paths."""
    return stmiss.build_event_tree(
        stmiss.VariableSpec(names=["A", "B"], levels=[["a0", "a1"], ["b0", "b1"]])
    )
