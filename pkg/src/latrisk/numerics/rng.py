from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SeededRng:
    """A (seed, stream) pair naming one reproducible numpy random stream.

    Distinct streams come from ``SeedSequence`` spawn keys, so they are
    statistically independent; the same pair always yields the same draws.
    """

    seed: int
    stream: tuple = ()

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=tuple(int(s) for s in self.stream))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream + tuple(keys))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    return SeededRng(seed, tuple(stream)).generator()
