"""Seedable random number generation.

Everything stochastic in the package draws from numpy's PCG64. The generator
family, the seed, and the draw order are part of each sampler's contract so
that runs replay bit-identically and trace oracles can re-execute the exact
draw sequence.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for the given nonnegative integer seed."""
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def subject_seed(base_seed: int, subject_index: int) -> int:
    """Per-subject seed: base XOR subject index."""
    return base_seed ^ subject_index
