"""Named random streams derived from a master seed.

Each concern (init, data, versors, sampling, mc) gets its own Philox
stream keyed by ``(seed, label)`` so that drawing more numbers for one
concern never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, label: str, *extra: int) -> np.random.Generator:
    key = [int(seed), zlib.crc32(label.encode("utf-8")), *map(int, extra)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
