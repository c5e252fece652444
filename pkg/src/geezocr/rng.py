"""Seeded random streams.

Every random draw in the package comes from a ``numpy.random.Generator``
whose PCG64 state is expanded from a master seed with SplitMix64. Substreams
are keyed by integers or strings, e.g. ``make_rng(42, "task", 7)``, so each
consumer gets an independent, reproducible stream.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(seed: int, *keys) -> int:
    """Fold substream keys into a 64-bit seed."""
    state = int(seed) & _MASK64
    state, out = splitmix64(state)
    for key in keys:
        state, out = splitmix64(state ^ _key_to_int(key))
    return out


def make_rng(seed: int, *keys) -> np.random.Generator:
    """A PCG64 generator whose 128-bit state and increment come from SplitMix64."""
    state = derive_seed(seed, *keys)
    words = []
    for _ in range(4):
        state, out = splitmix64(state)
        words.append(out)
    bitgen = np.random.PCG64()
    bitgen.state = {
        "bit_generator": "PCG64",
        "state": {"state": (words[0] << 64) | words[1], "inc": ((words[2] << 64) | words[3]) | 1},
        "has_uint32": 0,
        "uinteger": 0,
    }
    return np.random.Generator(bitgen)


def spawn(rng: np.random.Generator, *keys) -> np.random.Generator:
    """Child stream drawn from a parent generator (advances the parent by one draw)."""
    return make_rng(int(rng.integers(0, 2**63)), *keys)
