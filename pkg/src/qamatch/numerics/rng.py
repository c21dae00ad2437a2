"""Seeded random streams.

Every stream is numpy's PCG64 bit generator seeded through ``SeedSequence``.
Named sub-streams (``"split"``, ``"init"``, ``"dropout"``, ``"shuffle"``,
``"synth"``, ...) mix a CRC32 of the name into the entropy, so each consumer
gets an independent, reproducible stream from one user seed.
"""

from __future__ import annotations

import zlib

import numpy as np

ALGORITHM = "numpy-PCG64/SeedSequence"


class RandomSource:
    def __init__(self, seed: int, name: str = ""):
        self.seed = int(seed)
        self.name = name
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF]
        if name:
            entropy.append(zlib.crc32(name.encode("utf-8")))
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def child(self, name: str) -> "RandomSource":
        full = f"{self.name}/{name}" if self.name else name
        return RandomSource(self.seed, full)

    # thin pass-throughs used across the package
    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, name={self.name!r})"
