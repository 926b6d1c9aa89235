"""Named, seed-derived random streams.

Every random draw in a simulation comes from a generator keyed by
``(seed, round, role, client)``. Two runs with the same seed therefore see
the same numbers no matter in which order (or on which thread) clients are
evaluated.
"""
import numpy as np

# stream roles
SAMPLE = 0
UPLINK_U = 1
UPLINK_V = 2
UPLINK_Q = 3
INIT = 4
PROBE = 5


class SeedStreams:
    """Factory of independent generators derived from a single integer seed."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)

    def get(self, *key: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, *(int(k) for k in key)])

    def sampling(self, t: int) -> np.random.Generator:
        return self.get(t, SAMPLE)

    def client(self, t: int, role: int, client: int) -> np.random.Generator:
        return self.get(t, role, client)

    def __repr__(self):
        return f"SeedStreams(seed={self.seed})"
