"""Explicit, replayable randomness. Nothing here touches global RNG state."""
import numpy as np


def derive_seed(*parts: int) -> int:
    """Mix integer parts into one 64-bit seed (order-sensitive)."""
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]).generate_state(1, np.uint64)[0])


def rng(*parts: int) -> np.random.Generator:
    """Counter-based generator keyed by the mixed parts."""
    return np.random.Generator(np.random.Philox(key=derive_seed(*parts)))
