from __future__ import annotations

import numpy as np


class RngState:
    """Seeded random stream with a draw counter.

    The same seed and the same sequence of calls produce identical draws.
    ``position`` counts how many draw calls have been made, which makes it easy
    to assert that two runs consumed the stream identically.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.position = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, tag: int) -> "RngState":
        """Independent stream derived from this seed and an integer tag."""
        return RngState(np.random.SeedSequence([self.seed, int(tag)]).generate_state(1, np.uint64)[0])

    def _tick(self):
        self.position += 1
        return self._gen

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._tick().uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._tick().normal(loc, scale, size)

    def random(self, size=None):
        return self._tick().random(size)

    def integers(self, low, high=None, size=None):
        return self._tick().integers(low, high, size)

    def permutation(self, n):
        return self._tick().permutation(n)

    def choice(self, a, size=None, replace=True):
        return self._tick().choice(a, size=size, replace=replace)
