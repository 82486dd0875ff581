"""Deterministic randomness built on a counter-based generator.

Every random decision in the package flows through an ``RngState``: a seed
plus a named sub-stream key. Streams are derived by hashing the stream name
into the 128-bit Philox key, so ``RngState(7).stream("dropout")`` yields the
same bit stream on every platform and run. ``RngState`` itself is immutable;
call :meth:`RngState.generator` to obtain the advancing handle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALGORITHM = "numpy-philox4x64-v1"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash; stable across platforms and Python versions."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class RngState:
    """Seed plus sub-stream key for the Philox counter-based generator."""

    seed: int
    stream_key: int = 0
    algorithm: str = field(default=ALGORITHM, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_key", int(self.stream_key) & _MASK64)

    def stream(self, name: str) -> "RngState":
        """Derive an independent named sub-stream (e.g. "dropout", "mc/3")."""
        key = _fnv1a64(f"{self.stream_key:016x}/{name}")
        return RngState(self.seed, key)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        bits = np.random.Philox(key=np.array([self.seed, self.stream_key], dtype=np.uint64))
        return np.random.Generator(bits)


def as_generator(rng) -> np.random.Generator:
    """Accept an RngState, a Generator, or an int seed; return a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngState):
        return rng.generator()
    if isinstance(rng, int):
        return RngState(rng).generator()
    raise TypeError(f"cannot interpret {type(rng).__name__} as a random source")
