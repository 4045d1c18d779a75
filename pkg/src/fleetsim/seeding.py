"""Named, reproducible RNG sub-streams derived from one experiment seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for (seed, name); stable across runs and platforms."""
    entropy = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return np.random.default_rng(entropy)
