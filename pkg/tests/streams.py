"""Synthetic gradient streams shared by several test modules."""
import numpy as np


def drifting_stream(seed: int, l: int, m: int, rounds: int, rank: int = 4, drift: float = 0.3, noise: float = 0.05):
    """Low-rank-plus-noise matrices whose dominant subspace rotates slowly."""
    rng = np.random.default_rng(seed)
    left = rng.standard_normal((l, rank))
    for _ in range(rounds):
        left = left + drift * rng.standard_normal((l, rank))
        right = rng.standard_normal((rank, m))
        yield left @ right + noise * rng.standard_normal((l, m))


def random_stream(seed: int, l: int, m: int, rounds: int):
    rng = np.random.default_rng(seed)
    for _ in range(rounds):
        yield rng.standard_normal((l, m))
