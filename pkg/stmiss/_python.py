"""This module provides general Python related utilities that are not specific to
staged trees.
"""

import typing

import numpy


def derive_seed(base: int, *keys: int) -> int:
    """Derive an independent seed from a base seed and a sequence of non-negative
    integer keys.  The same inputs always give the same seed so any single replicate
    can be reproduced in isolation.

    Args:
        base: The user supplied seed.
        keys: Identifiers such as a condition index and a replicate index.
    """
    sequence = numpy.random.SeedSequence([base, *keys])
    return int(sequence.generate_state(1, dtype=numpy.uint64)[0])


def make_rng(seed: typing.Optional[int]) -> numpy.random.Generator:
    """Build the generator every random operation draws from."""
    return numpy.random.default_rng(seed)
