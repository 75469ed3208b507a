"""Deterministic counter-based random streams.

Every stochastic component in the package draws from a Philox generator
keyed by a root seed plus a tuple of stream labels.  A given (seed, labels)
pair always yields the same values, independent of evaluation order or
parallel schedule, which keeps simulations and studies reproducible cell
by cell.
"""

from __future__ import annotations

import zlib

import numpy as np

_WORD_MASK = 0xFFFFFFFF


def _key_word(part: int | str) -> int:
    """Map one stream label to a 32-bit key word."""
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        return int(part) & _WORD_MASK
    raise TypeError(f"stream labels must be int or str, got {type(part).__name__}")


def stream(seed: int, *labels: int | str) -> np.random.Generator:
    """Return the Philox generator for (seed, *labels).

    Labels are small integers (day, node id, fold index, ...) or short
    strings naming the purpose of the stream.
    """
    ss = np.random.SeedSequence(
        entropy=int(seed), spawn_key=tuple(_key_word(p) for p in labels)
    )
    return np.random.Generator(np.random.Philox(ss))
