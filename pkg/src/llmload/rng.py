"""Seeded random streams.

Every random draw in the package goes through a :class:`numpy.random.Generator`.
Substreams are derived from a master seed and a tuple of string keys using a
counter-based bit generator (Philox), so a client's draws depend only on the
master seed, its id, and the role of the stream (arrival, data, ...).
"""

from __future__ import annotations

import hashlib

import numpy as np

DEFAULT_SEED = 20250101


def derive(seed: int, *keys: str) -> np.random.Generator:
    """Return an independent generator keyed on ``seed`` and ``keys``."""
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode())
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode())
    key = int.from_bytes(h.digest(), "little")
    return np.random.Generator(np.random.Philox(key=key))


def as_generator(stream: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(stream, np.random.Generator):
        return stream
    if stream is None:
        return derive(DEFAULT_SEED)
    return derive(int(stream))
