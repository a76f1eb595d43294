"""Counter-based random streams keyed by (seed, purpose tag, replicate path).

A stream is a value: the same key always yields the same Philox
generator, whatever order replicates are evaluated in.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Tuple

import numpy as np

SEED_MAX = 2 ** 63 - 1


def tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    seed: int
    tag: str = "root"
    path: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) <= SEED_MAX:
            raise ValueError("seed must be a non-negative 63-bit integer")

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.tag, self.path + (int(index),))

    def sub(self, tag: str) -> "RngStream":
        """Same replicate path, different purpose."""
        return RngStream(self.seed, tag, self.path)

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=int(self.seed), spawn_key=(tag_key(self.tag),) + self.path)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence()))

    def describe(self) -> str:
        return f"{self.seed}:{self.tag}:{'/'.join(map(str, self.path))}"
