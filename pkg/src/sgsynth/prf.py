"""Keyed counter-mode pseudorandom streams (Philox under a hashed key).

Protocol parties that share a seed and make the same sequence of draws
obtain identical words on both sides; this is the only property the
correlated-randomness layer needs.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["PrfStream", "derive_key", "generator_from_key"]

_BLOCK = 4  # Philox emits 4 uint64 words per counter increment


def derive_key(*parts: int | str | bytes) -> bytes:
    """Stable 16-byte key derived from heterogeneous labels."""
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        if isinstance(part, bytes):
            h.update(b"b" + part)
        elif isinstance(part, str):
            h.update(b"s" + part.encode())
        else:
            h.update(b"i" + int(part).to_bytes(16, "little", signed=True))
        h.update(b"\x00")
    return h.digest()


def generator_from_key(key: bytes, counter: int = 0) -> np.random.Generator:
    philox = np.random.Philox(key=int.from_bytes(key[:16], "little"), counter=counter)
    return np.random.Generator(philox)


class PrfStream:
    """Deterministic uint64 stream addressable by an advancing counter."""

    def __init__(self, key: bytes):
        self._key_int = int.from_bytes(
            hashlib.blake2b(key, digest_size=16).digest(), "little"
        )
        self.counter = 0

    def words(self, n: int) -> np.ndarray:
        gen = np.random.Generator(np.random.Philox(key=self._key_int, counter=self.counter))
        out = gen.integers(0, 2 ** 64, size=n, dtype=np.uint64)
        # Advance past every block the generator may have consumed.
        self.counter += (n + _BLOCK - 1) // _BLOCK + 1
        return out
