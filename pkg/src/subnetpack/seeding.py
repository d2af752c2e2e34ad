"""Deterministic seed derivation for independent RNG streams."""

from __future__ import annotations

import numpy as np


def derive_seed(*parts: int) -> int:
    """Mix integer parts into a stable 64-bit seed.

    Same parts always give the same seed, on any platform; distinct part
    tuples give independent streams (numpy SeedSequence contract).
    """
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_from(*parts: int) -> np.random.Generator:
    """Generator seeded from mixed parts, see derive_seed."""
    return np.random.default_rng(derive_seed(*parts))
