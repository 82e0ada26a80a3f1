"""Keyed, counter-based random number streams.

Every stochastic component of the package draws from a Philox generator whose
key is a hash of ``(seed, *key_parts)``.  This gives each logical unit (an
account, a dependent block, a repetition of an experiment, ...) its own
independent stream, so results do not depend on generation order or on the
number of worker threads.

Realisation-level streams use fixed-size draw blocks: realisation ``k`` of a
unit consumes draw block ``k`` of the unit's stream, so two plans that assign
different realisation counts to the same unit share their common prefix of
realisations (common random numbers).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "derive_seed"]


def _digest(seed: int, key: tuple) -> bytes:
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for part in key:
        h.update(b"\x1f")
        if isinstance(part, (int, np.integer)):
            h.update(b"i" + str(int(part)).encode())
        elif isinstance(part, str):
            h.update(b"s" + part.encode())
        else:
            raise TypeError(f"stream key parts must be int or str, got {type(part).__name__}")
    return h.digest()


def stream(seed: int, *key) -> np.random.Generator:
    """Return the generator for the stream identified by ``(seed, *key)``."""
    d = _digest(seed, key)
    philox_key = int.from_bytes(d[:16], "little")
    return np.random.Generator(np.random.Philox(key=philox_key))


def derive_seed(seed: int, *key) -> int:
    """Derive a child integer seed, for namespacing whole experiments."""
    d = _digest(seed, key)
    return int.from_bytes(d[16:24], "little") >> 1
