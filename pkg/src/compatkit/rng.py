"""Portable deterministic randomness primitives.

Everything random in this package bottoms out in SplitMix64, a public-domain
64-bit mixing function with a fixed integer recurrence.  It is implemented in
plain Python integer arithmetic, so streams are identical on every platform
and interpreter.  Heavier sampling (Gaussian data) uses numpy's PCG64 seeded
from values produced here.

Seed-splitting rule used by the simulation grid (documented contract):

    cell_seed = fold(fold(fold(fold(master, n), p), rho_bits), replication)

where ``fold(h, v) = splitmix64(h XOR splitmix64(v))`` and ``rho_bits`` is the
big-endian IEEE-754 bit pattern of the float rho.
"""

from __future__ import annotations

import struct

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output for the 64-bit input ``x``."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def fold(h: int, v: int) -> int:
    return splitmix64((h & _MASK64) ^ splitmix64(v & _MASK64))


def float_bits(x: float) -> int:
    """Big-endian IEEE-754 bit pattern of a double, as an unsigned int."""
    return int.from_bytes(struct.pack(">d", float(x)), "big")


def cell_seed(master_seed: int, n: int, p: int, rho: float, replication: int) -> int:
    """Derive one simulation cell's seed from the master seed and cell keys."""
    h = master_seed & _MASK64
    for part in (n, p, float_bits(rho), replication):
        h = fold(h, part)
    return h


class SignStream:
    """Stream of fair ±1 signs extracted bit-by-bit from SplitMix64 words.

    Bits are consumed least-significant first; bit 0 maps to +1 and bit 1
    to -1.  The stream for a given seed is identical on every platform.
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK64
        self._word = 0
        self._bits_left = 0

    def _next_word(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def next_sign(self) -> int:
        if self._bits_left == 0:
            self._word = self._next_word()
            self._bits_left = 64
        bit = self._word & 1
        self._word >>= 1
        self._bits_left -= 1
        return -1 if bit else 1

    def next_signs(self, count: int) -> tuple[int, ...]:
        return tuple(self.next_sign() for _ in range(count))
