"""Deterministic seed derivation and counter-based generators.

Every random stream in the package is a Philox generator keyed by a 64-bit
seed derived from hashing (base_seed, *stream_parts).  Philox is
counter-based, so streams are reproducible across platforms and independent
of draw order; hashing makes sub-streams independent of how many sibling
streams exist (deleting one run never shifts another run's seed).
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(base_seed: int, *parts) -> int:
    """Derive a 64-bit sub-seed from a base seed and a stream label."""
    label = repr((int(base_seed) & MASK64,) + parts).encode()
    digest = hashlib.blake2b(label, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(base_seed: int, *parts) -> np.random.Generator:
    """Philox generator for the (base_seed, *parts) stream."""
    return np.random.Generator(np.random.Philox(key=derive_seed(base_seed, *parts)))
