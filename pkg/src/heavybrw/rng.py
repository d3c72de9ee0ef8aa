"""Counter-based, splittable random streams.

Every stream is a Philox generator keyed by ``(seed, purpose, index...)``
through :class:`numpy.random.SeedSequence`, so the numbers a task sees never
depend on how many tasks run or in which order.
"""

import zlib

import numpy as np


def purpose_id(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Independent generator for ``(seed, purpose, *index)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(purpose_id(purpose), *map(int, index)))
    return np.random.Generator(np.random.Philox(ss))
