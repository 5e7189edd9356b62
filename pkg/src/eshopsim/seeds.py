"""Deterministic derivation of independent 64-bit RNG streams.

Per-UE and per-purpose sub-seeds are derived from the master seed with a
splitmix64 chain, so adding UEs or new stream labels never perturbs the
draws of existing streams.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 round; a full-period 64-bit mixing function."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fold(part: int | str) -> int:
    if isinstance(part, bool):  # bool is an int subclass; reject to avoid surprises
        raise TypeError("seed parts must be int or str")
    if isinstance(part, int):
        return part & _MASK64
    if isinstance(part, str):
        # FNV-1a, 64-bit
        h = 0xCBF29CE484222325
        for byte in part.encode("utf-8"):
            h = ((h ^ byte) * 0x100000001B3) & _MASK64
        return h
    raise TypeError(f"seed parts must be int or str, got {type(part)!r}")


def derive_seed(master_seed: int, *parts: int | str) -> int:
    """Mix ``master_seed`` with stream labels into an independent 64-bit seed."""
    h = splitmix64(master_seed & _MASK64)
    for part in parts:
        h = splitmix64(h ^ _fold(part))
    return h


def rng_from(master_seed: int, *parts: int | str) -> np.random.Generator:
    """PCG64 generator seeded from the derived stream seed."""
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, *parts)))
