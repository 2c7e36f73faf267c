"""Named, reproducible random streams derived from a single root seed.

Every stage of the pipeline (dataset generation, weight init, shuffling,
refinement trials) pulls its own generator via `stream(root, *names)`, so
stages can be rerun independently without disturbing each other.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(root_seed: int, *names: str) -> np.random.Generator:
    """Return a Generator keyed by the root seed and a path of stream names.

    The same (root_seed, names) always yields the same stream; distinct
    names yield statistically independent streams.
    """
    entropy = [int(root_seed) & 0xFFFFFFFF]
    entropy.extend(zlib.crc32(name.encode("utf-8")) for name in names)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
