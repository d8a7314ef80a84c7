"""Counter-based RNG derivation.

Every random draw in the package comes from a Philox generator keyed on a
tuple of integers, so results never depend on execution order.
"""
from __future__ import annotations

import hashlib

import numpy as np

# stream tags, kept stable so saved experiments stay reproducible
TAG_RSVD = 1
TAG_SELECT = 2
TAG_SHUFFLE = 3
TAG_PARTITION = 4
TAG_DATA = 5
TAG_INIT = 6
TAG_STATE = 7


def name_key(name: str) -> int:
    """Stable 64-bit integer for a string (layer names, stream ids)."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, *keys: int | str) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        entropy.append(name_key(key) if isinstance(key, str) else int(key))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys: int | str) -> int:
    return int(derive_rng(seed, *keys).integers(0, 2**63 - 1))
