"""Stateless rng derivation.

Every random stream is derived from the run seed plus a tuple of labels
(step, prompt id, trajectory index, ...), so results never depend on the
order in which workers consume randomness.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_hash(*parts: object) -> int:
    """64-bit digest of ``repr(parts)``; unlike ``hash`` it is not salted per process."""
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, stable_hash(*labels)]))
