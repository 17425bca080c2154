"""Seed splitting.

Every random stream in the library is a ``numpy.random.Generator`` built from
``SeedSequence(base_seed, spawn_key=key)``. Keys are tuples of non-negative
integers naming the role of the stream, e.g. ``(STREAM_DATA,)`` for the shared
observation record or ``(STREAM_REPLICATE, J, eps_key, i)`` for replicate ``i``
of a sweep cell. Distinct keys hash to distinct, statistically independent
PCG64 states; no stream is ever derived from another stream's output.
"""

from __future__ import annotations

import numpy as np

STREAM_DATA = 0
STREAM_REPLICATE = 1
STREAM_FILTER = 2
STREAM_VERIFY = 3


def make_rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def epsilon_key(epsilon: float) -> int:
    """Integer stream key for a perturbation size (resolution 1e-9)."""
    return int(round(float(epsilon) * 1e9))


def as_rng(rng) -> np.random.Generator:
    """Accept a Generator, an integer seed, or None (fresh OS entropy)."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return make_rng(int(rng))
