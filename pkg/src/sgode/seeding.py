"""Named random streams.

Every consumer asks for ``rng(seed, purpose)``. The stream is Philox (a
counter-based generator) keyed by a SeedSequence whose spawn key is the
CRC-32 of the purpose string, so streams for different purposes never
overlap and adding a new consumer never perturbs existing ones.
"""
import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def rng(seed, purpose):
    key = zlib.crc32(purpose.encode("utf-8"))
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))
