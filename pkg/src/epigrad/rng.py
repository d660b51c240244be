"""Named random substreams derived from one root seed.

Every stochastic component pulls its own generator via stream(seed, *scope),
so draws are reproducible and independent of execution order; e.g. the
transmission noise for step t is stream(seed, "gumbel", t) regardless of what
else consumed randomness before it.
"""

from __future__ import annotations

import zlib

import numpy as np


def _scope_key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *scope) -> np.random.Generator:
    """Generator for (seed, scope...); identical arguments give identical draws."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_scope_key(p) for p in scope]
    return np.random.default_rng(np.random.SeedSequence(entropy))
