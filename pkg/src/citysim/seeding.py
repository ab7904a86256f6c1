"""Deterministic seed derivation.

The simulator draws from named substreams (road growth, traffic routing per
vehicle, order spawning, ...) so that adding draws to one subsystem never
perturbs another. Substream seeds are derived with BLAKE2b, which is stable
across platforms and Python versions, unlike ``hash()``.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(base_seed: int, *labels) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(base_seed)).encode("ascii"))
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "big")


def make_rng(base_seed: int, *labels) -> random.Random:
    """Mersenne Twister stream for the given (seed, labels) substream."""
    return random.Random(derive_seed(base_seed, *labels))
