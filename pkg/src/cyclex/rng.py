"""Named random substreams.

All randomness in a run flows from one root seed; components derive their own
generator from (root_seed, name...) so re-seeding one stage never shifts
another.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(root_seed: int, *names: str | int) -> np.random.Generator:
    """Generator for the substream identified by the given name parts."""
    entropy = [int(root_seed) & 0xFFFFFFFF]
    for part in names:
        if isinstance(part, int):
            entropy.append(part & 0xFFFFFFFF)
        else:
            entropy.append(zlib.crc32(part.encode("utf-8")))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def substream_seed(root_seed: int, *names: str | int) -> int:
    """Stable integer seed for the substream (for APIs that take raw seeds)."""
    return int(substream(root_seed, *names).integers(0, 2**63 - 1))
