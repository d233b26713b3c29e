"""Counter-based random streams keyed by a structured seed tuple."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class SeedKey:
    run_seed: int
    round: int = 0
    level: int = 0
    sample_index: int = 0
    stage_tag: int = 0

    def with_stage(self, stage_tag: int) -> "SeedKey":
        return replace(self, stage_tag=stage_tag)

    def philox_key(self) -> np.ndarray:
        packed = struct.pack(
            "<5Q",
            *(v & 0xFFFFFFFFFFFFFFFF for v in (self.run_seed, self.round, self.level, self.sample_index, self.stage_tag)),
        )
        digest = hashlib.blake2b(packed, digest_size=16, person=b"bmlmc-seedkey").digest()
        return np.frombuffer(digest, dtype=np.uint64).copy()


def as_seed_key(seed) -> SeedKey:
    if isinstance(seed, SeedKey):
        return seed
    return SeedKey(run_seed=int(seed))


def generator(key: SeedKey) -> np.random.Generator:
    """Independent Philox stream for ``key``; identical keys give identical streams."""
    return np.random.Generator(np.random.Philox(key=key.philox_key()))
