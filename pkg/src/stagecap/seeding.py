"""Deterministic seed derivation so independent RNG streams never collide."""

import hashlib

import numpy as np


def derive_seed(base: int, *tags: object) -> int:
    """Derive a 64-bit seed from a base seed and a tag path.

    Stable across runs and platforms; distinct tag paths give
    independent streams.
    """
    text = repr((int(base),) + tuple(str(t) for t in tags))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(base: int, *tags: object) -> np.random.Generator:
    """A PCG64 generator seeded from `derive_seed(base, *tags)`."""
    return np.random.Generator(np.random.PCG64(derive_seed(base, *tags)))
