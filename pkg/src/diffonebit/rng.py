"""Seed derivation.

Every random stream in the package is a Philox4x64 counter-based generator
keyed by a ``SeedSequence`` built from a base seed and a tuple of integer
keys. The same (seed, keys) pair always yields the same stream, and distinct
keys give statistically independent streams, so trials and sweep points can
run in any order or in parallel.
"""

import hashlib

import numpy as np

RNG_ALGORITHM = "numpy-philox4x64/seedsequence-v1"


def text_key(text):
    """Stable 32-bit integer key for a string (e.g. a task name)."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def derive_rng(seed, *keys):
    """Return a Generator for ``seed`` and a path of non-negative integer keys."""
    if seed is None or int(seed) < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    keys = tuple(text_key(k) if isinstance(k, str) else int(k) for k in keys)
    ss = np.random.SeedSequence(int(seed), spawn_key=keys)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *keys):
    """Integer seed for a sub-task, drawn from the (seed, keys) stream."""
    return int(derive_rng(seed, *keys).integers(0, 2**63 - 1))
