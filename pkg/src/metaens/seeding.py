"""Explicit, portable random streams.

Every stochastic routine takes an integer seed and builds its own generator
through :func:`make_rng`; nothing touches numpy's global state.
"""
from __future__ import annotations

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def derive_seed(master: int, *keys: int | str) -> int:
    """Derive an independent 63-bit seed from a master seed and a key path.

    String keys are hashed with FNV-1a so the derivation does not depend on
    Python's randomized ``hash``.
    """
    entropy = [int(master) & _MASK64]
    for key in keys:
        if isinstance(key, str):
            key = fnv1a64(key.encode("utf-8"))
        entropy.append(int(key) & _MASK64)
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))
