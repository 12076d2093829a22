"""Named random sub-streams derived from a single root seed.

Every consumer of randomness (scheduler, noise, tie-breaks, ...) draws from its
own stream, so adding a diagnostic that consumes randomness never perturbs the
trajectory of another component.
"""
import zlib

import numpy as np


def substream(seed, name):
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


class Streams:
    """Lazily created, cached named generators for one replicate."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._cache = {}

    def __getitem__(self, name):
        if name not in self._cache:
            self._cache[name] = substream(self.seed, name)
        return self._cache[name]
