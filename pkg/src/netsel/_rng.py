"""Seed derivation and generator construction.

The whole project draws randomness from numpy's PCG64. Every consumer gets
its own generator seeded by a hash of (master seed, purpose tag, indices),
so results never depend on scheduling, worker count or call order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *parts: object) -> int:
    """Map (master seed, label parts) to a stable 64-bit seed."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(str(p).encode())
    return int.from_bytes(h.digest()[:8], "little")


def generator(master: int, *parts: object) -> np.random.Generator:
    """PCG64 generator for one derived stream."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, *parts)))
