"""Deterministic random-stream management.

A single master seed fans out into named substreams so that every stochastic
component (data generation, environment resampling, reparametrization noise,
prior integration draws, certification trials, prediction draws) owns an
independent stream.  Streams are addressed by paths of integer or string keys;
the derivation is pure arithmetic on 64-bit state, so the same (seed, path)
always yields the same numpy Generator regardless of call order, platform, or
process boundaries.  Strings are hashed with FNV-1a, never the builtin hash().
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(state: int) -> int:
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _MASK
    return h


def _key_to_int(key) -> int:
    if isinstance(key, str):
        return _fnv1a64(key.encode("utf-8"))
    if isinstance(key, (int, np.integer)):
        # signed ints allowed; fold into 64-bit, offset so key 0 is not a no-op
        return (int(key) * 0x9E3779B97F4A7C15 + 0x165667B19E3779F9) & _MASK
    raise TypeError(f"stream key must be int or str, got {type(key).__name__}")


class SeedTree:
    """A node in a keyed tree of random streams rooted at a master seed."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = _splitmix64(int(seed) & _MASK)

    def child(self, *keys) -> "SeedTree":
        """Derive the substream at the given key path."""
        node = SeedTree.__new__(SeedTree)
        state = self.state
        for key in keys:
            state = _splitmix64(state ^ _key_to_int(key))
        node.state = state
        return node

    def generator(self) -> np.random.Generator:
        """Fresh numpy Generator for this node; identical every call."""
        return np.random.Generator(np.random.PCG64(self.state))

    def __repr__(self):
        return f"SeedTree(state=0x{self.state:016x})"
