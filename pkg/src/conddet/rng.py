"""Seeded randomness.

Every random draw in the package flows through ``Rng``, a thin wrapper
around numpy's PCG64 generator. Independent parts of a run (parameter
init, the scene for iteration t, evaluation scenes) pull their seeds from
``derive_seed``, which mixes the base seed with a stream name and index.
That makes any single piece reproducible in isolation: regenerating the
scene of iteration 1234 needs no replay of the first 1233.
"""

import hashlib

import numpy as np


def derive_seed(base_seed, stream, index=0):
    """Stable 64-bit seed for (base_seed, stream name, index)."""
    tag = int.from_bytes(hashlib.sha256(stream.encode("utf8")).digest()[:8], "little")
    ss = np.random.SeedSequence([int(base_seed) & (2**63 - 1), tag, int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


class Rng:
    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, shape=None):
        return self._gen.uniform(low, high, shape)

    def normal(self, shape=None, scale=1.0):
        return self._gen.normal(0.0, scale, shape)

    def integers(self, low, high):
        """One integer drawn uniformly from [low, high)."""
        return int(self._gen.integers(low, high))

    def choice(self, n, size):
        """size distinct indices from range(n), sorted ascending."""
        return np.sort(self._gen.choice(n, size=size, replace=False))

    def xavier(self, fan_in, fan_out):
        """A (fan_in, fan_out) weight matrix, uniform Xavier/Glorot init."""
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self._gen.uniform(-limit, limit, (fan_in, fan_out))
