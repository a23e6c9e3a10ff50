"""Deterministic RNG substream derivation.

No global randomness anywhere in the package: every sampler takes an
explicit ``numpy.random.Generator``, and independent substreams are derived
from an integer root plus a structured key.
"""
from __future__ import annotations

import numpy as np

_ENTROPY_BOUND = 2**63


def substream(root: int | np.random.Generator, *key: int) -> np.random.Generator:
    """Return an independent generator identified by ``(root, key)``.

    The same integer root and key always produce the same stream. When
    ``root`` is a Generator, a single integer is drawn from it to form the
    root, so the result is reproducible given the generator's state.
    """
    if isinstance(root, np.random.Generator):
        root = int(root.integers(_ENTROPY_BOUND))
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def draw_root(rng: np.random.Generator) -> int:
    """Draw an integer root usable with :func:`substream`."""
    return int(rng.integers(_ENTROPY_BOUND))
