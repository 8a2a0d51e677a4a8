"""Stable seed derivation so every randomized stage replays bit-identically.

Python's builtin ``hash`` is salted per process; seeds here are derived from
blake2b digests of a canonical encoding instead, making runs reproducible
across processes and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_seed(*parts) -> int:
    """Derive a 64-bit seed from an arbitrary tuple of primitives."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, bytes):
            h.update(b"b" + p)
        elif isinstance(p, str):
            h.update(b"s" + p.encode("utf-8"))
        elif isinstance(p, bool):
            h.update(b"?" + bytes([p]))
        elif isinstance(p, int):
            h.update(b"i" + p.to_bytes(16, "little", signed=True))
        elif isinstance(p, float):
            h.update(b"f" + np.float64(p).tobytes())
        else:
            raise TypeError(f"unsupported seed part {type(p)}")
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def rng_from(*parts) -> np.random.Generator:
    return np.random.default_rng(stable_seed(*parts))
