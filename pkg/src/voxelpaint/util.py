"""Seed derivation for reproducible per-scope RNG streams.

Python's builtin hash() is salted per process, so seeds are derived from
sha256 instead; the same parts always map to the same stream.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from the given parts (ints, strings, ...)."""
    text = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
