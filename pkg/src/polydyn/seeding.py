"""Deterministic per-component random streams derived from one master seed.

Every consumer asks for a named stream; the name (plus any integer
qualifiers such as iteration or member index) is hashed into a Philox
spawn key, so streams are independent of each other and of the order in
which components run.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream key integers must be non-negative")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"stream key parts must be str or int, got {type(part)!r}")


class SeedStreams:
    """Factory for named, reproducible Philox generators."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)

    def generator(self, *key) -> np.random.Generator:
        if not key:
            raise ValueError("stream key must be non-empty")
        spawn = tuple(_key_part(p) for p in key)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=spawn)
        return np.random.Generator(np.random.Philox(seq))
