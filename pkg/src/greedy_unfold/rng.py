"""Deterministic random-stream derivation.

Every random draw in the library comes from a Philox counter-based generator
whose key is derived from a user seed plus a structured path (tags and
indices). Streams derived from the same (seed, path) are bit-identical across
runs, platforms, and worker counts.
"""

from __future__ import annotations

import zlib

import numpy as np


def _path_word(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream path components must be nonnegative, got {part}")
        return int(part) & 0xFFFFFFFF
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8")) & 0xFFFFFFFF
    raise TypeError(f"stream path components must be int or str, got {type(part).__name__}")


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *path)``.

    ``path`` components are ints (e.g. trial or epoch indices) or short string
    tags (e.g. "matrix", "noise").
    """
    key = tuple(_path_word(p) for p in path)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
