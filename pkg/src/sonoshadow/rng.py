"""Named deterministic random substreams.

All randomness in the package flows from a single integer seed. Components
derive independent generators from (seed, stream name, *indices), so any
stage (corpus synthesis, weight init, epoch shuffling, per-step shadow
injection) can be reproduced in isolation.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream", "spawn_seeds"]


def _tag(name: str) -> int:
    # crc32 is stable across platforms and Python versions
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for the (seed, name, *indices) substream."""
    return np.random.default_rng(np.random.SeedSequence([seed, _tag(name), *indices]))


def spawn_seeds(seed: int, name: str, count: int) -> list[int]:
    """`count` independent integer seeds drawn from one named substream."""
    rng = substream(seed, name)
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=count)]
