"""Deterministic seed derivation.

All stage- and tile-level randomness derives from one run seed through the
same documented hash: blake2b-64 of "<seed>:<part>:<part>..." interpreted
big-endian. Partial re-runs therefore see the same random draws as full
runs, on any platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *parts: str | int) -> int:
    """64-bit child seed for a named stage/tile under the given run seed."""
    text = ":".join([str(seed), *map(str, parts)])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derived_rng(seed: int, *parts: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *parts))
