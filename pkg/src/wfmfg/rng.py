"""Deterministic, splittable random streams.

Every simulated path gets its own counter-based (Philox) generator, keyed by
``(root seed, module, path index, noise source)``.  Source 0 is reserved for
the common noise, source 1 for the idiosyncratic clocks.
"""
import zlib

import numpy as np

COMMON = 0
IDIOSYNCRATIC = 1
GAUSSIAN = 2


def module_key(name):
    return zlib.crc32(name.encode("utf8")) & 0xFFFFFFFF


def stream(root, module, path=0, source=0):
    """Return an independent Generator for one (module, path, source) triple."""
    if isinstance(module, str):
        module = module_key(module)
    seq = np.random.SeedSequence(entropy=int(root) & (2**64 - 1),
                                 spawn_key=(int(module), int(path), int(source)))
    return np.random.Generator(np.random.Philox(seq))


class PathStreams:
    """Lazily created sub-streams of a single path."""

    def __init__(self, root, module, path):
        self.root = root
        self.module = module
        self.path = path
        self._cache = {}

    def __getitem__(self, source):
        if source not in self._cache:
            self._cache[source] = stream(self.root, self.module, self.path, source)
        return self._cache[source]
