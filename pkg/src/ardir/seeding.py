"""Deterministic seed derivation.

Every stochastic event in a run (weight init, batch shuffling, attack
restarts, evaluation attacks) draws from its own generator whose seed is
derived from the run's master seed plus a structural tag. Nothing touches
the global torch RNG, so independent runs never interfere and a run replays
bit-for-bit from (config, seed).
"""

import hashlib

import torch


def derive_seed(master: int, *tags) -> int:
    """Map (master seed, tag path) to a stable 63-bit seed."""
    key = "/".join([str(int(master))] + [str(t) for t in tags])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


def make_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g
