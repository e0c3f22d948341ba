"""Counter-based random streams (Philox) for full reproducibility.

Every stochastic component takes an explicit RngStream; identical seed and
call sequence give identical samples.  Child streams are keyed by
(seed, stream_id) so per-sentence sampling is order-independent.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


class RngStream:
    def __init__(self, seed, stream_id=0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64],
                       dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, stream_id):
        """Independent stream derived from (seed, stream_id)."""
        return RngStream(self.seed, stream_id)

    def uniform(self, shape=None, dtype=np.float64):
        return self._gen.random(size=shape, dtype=dtype)

    def normal(self, shape=None, std=1.0):
        return self._gen.standard_normal(size=shape) * std

    def gumbel(self, shape=None):
        """i.i.d. Gumbel(0,1) via -log(-log(u)), u clamped away from {0,1}."""
        u = self._gen.random(size=shape)
        u = np.clip(u, 1e-12, 1.0 - 1e-12)
        return -np.log(-np.log(u))

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)

    def sample_without_replacement(self, n, count):
        """Uniform sample of `count` distinct indices from range(n)."""
        if count > n:
            raise ValueError(f"cannot sample {count} from population of {n}")
        return np.sort(self._gen.choice(n, size=count, replace=False))

    def shuffle(self, x):
        self._gen.shuffle(x)
