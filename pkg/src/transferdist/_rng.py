"""Seed plumbing.

Every random draw in the package comes from a ``numpy.random.Generator``
built from a seed plus integer coordinates, so that a study cell
(prior, class, size, repeat, ...) always sees the same stream no matter
in which order cells are evaluated.
"""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

Seed = Union[int, Sequence[int]]


def seed_key(seed: Seed, *coords: int) -> tuple[int, ...]:
    """Flatten ``seed`` and ``coords`` into a tuple of non-negative ints."""
    if isinstance(seed, (int, np.integer)):
        base = (int(seed),)
    else:
        base = tuple(int(s) for s in seed)
    key = base + tuple(int(c) for c in coords)
    if any(k < 0 for k in key):
        raise ValueError(f"seeds must be non-negative, got {key}")
    return key


def make_rng(seed: Seed, *coords: int) -> np.random.Generator:
    return np.random.default_rng(list(seed_key(seed, *coords)))
