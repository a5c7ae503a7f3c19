"""Deterministic, splittable random streams.

Every random draw in the package comes from a Philox (counter-based)
generator whose seed is derived from a master seed plus a path of labels,
e.g. ``stream(master, "first-lemma", k, trial)``.  Streams derived this way
are independent of each other and of the order in which they are consumed,
which is what makes worker-parallel campaigns reproduce byte-for-byte.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _encode(part) -> int:
    """Map a path element (label or index) to a stable nonnegative int."""
    if isinstance(part, (bool,)):
        raise TypeError("booleans are ambiguous seed path elements")
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"seed path ints must be nonnegative, got {part}")
        return int(part)
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big")
    raise TypeError(f"unsupported seed path element: {part!r}")


def seed_for(master_seed: int, *path) -> int:
    """Derive a 64-bit stream seed from a master seed and path labels."""
    ss = np.random.SeedSequence([_encode(master_seed)] + [_encode(p) for p in path])
    return int(ss.generate_state(1, np.uint64)[0])


def stream(seed: int, *path) -> np.random.Generator:
    """Philox generator for the stream identified by ``seed`` and ``path``."""
    entropy = [_encode(seed)] + [_encode(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
