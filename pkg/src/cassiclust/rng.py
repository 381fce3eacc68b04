"""Seeded random streams.

All randomness derives from a single 64-bit seed. Each stochastic step asks
for a *named* stream; the stream is a counter-based ``Philox`` generator keyed
by ``SeedSequence(seed, spawn_key=(crc32(name), *index))``. A stream therefore
depends only on ``(seed, name, index)`` and never on how many draws other
stages made before it.
"""
import zlib

import numpy as np

from .errors import ValidationError

SEED_MAX = 2**64 - 1


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, name: str, *index: int) -> np.random.Generator:
    key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(i) for i in index)
    seq = np.random.SeedSequence(check_seed(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))
