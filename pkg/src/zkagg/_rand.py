"""Deterministic randomness.

Everything in the package that needs randomness takes a ``random.Random``
instance. :class:`HashDrbg` is a drop-in subclass whose stream comes from
SHAKE-256 in counter mode, so a fixed seed reproduces every key, share and
proof bit-for-bit while the output is still cryptographically strong.
"""

from __future__ import annotations

import hashlib
import os
import random

_BLOCK = 136  # SHAKE-256 rate in bytes


class HashDrbg(random.Random):
    """``random.Random`` backed by SHAKE-256(seed || counter)."""

    def __init__(self, seed: bytes | str | int | None = None):
        self._buf = b""
        self._counter = 0
        self._key = b""
        super().__init__(seed)

    def seed(self, a=None, version=2):  # noqa: D102 - mirrors random.Random
        if a is None:
            a = os.urandom(32)
        if isinstance(a, int):
            a = a.to_bytes((a.bit_length() + 8) // 8, "big", signed=True)
        elif isinstance(a, str):
            a = a.encode()
        self._key = hashlib.sha256(b"zkagg-drbg" + bytes(a)).digest()
        self._buf = b""
        self._counter = 0

    def getstate(self):
        return (self._key, self._counter, self._buf)

    def setstate(self, state):
        self._key, self._counter, self._buf = state

    def randbytes(self, n: int) -> bytes:
        while len(self._buf) < n:
            h = hashlib.shake_256(self._key + self._counter.to_bytes(8, "big"))
            self._buf += h.digest(max(_BLOCK, n - len(self._buf)))
            self._counter += 1
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def getrandbits(self, k: int) -> int:
        if k < 0:
            raise ValueError("number of bits must be non-negative")
        if k == 0:
            return 0
        nbytes = (k + 7) // 8
        x = int.from_bytes(self.randbytes(nbytes), "big")
        return x >> (nbytes * 8 - k)

    def random(self) -> float:
        return self.getrandbits(53) / (1 << 53)

    def fork(self, label: bytes | str) -> "HashDrbg":
        """Independent child stream; the parent advances by 32 bytes."""
        if isinstance(label, str):
            label = label.encode()
        return HashDrbg(self.randbytes(32) + label)


def make_rng(seed=None) -> random.Random:
    """Accept a seed, an existing Random, or None and return a Random."""
    if isinstance(seed, random.Random):
        return seed
    return HashDrbg(seed)
