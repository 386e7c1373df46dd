"""Deterministic named random streams derived from a single root seed.

Every source of randomness in an experiment draws from ``stream(root, name)``
with a distinct name such as ``"fold-3/model"``.  Streams are independent and
stable across runs and platforms, so adding a new consumer never perturbs the
draws seen by existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_seed(root_seed: int, name: str) -> np.random.SeedSequence:
    """Return the seed sequence for the stream ``name`` under ``root_seed``."""
    if root_seed < 0:
        raise ValueError(f"root seed must be non-negative, got {root_seed}")
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence([root_seed, *words])


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Return an independent generator for ``(root_seed, name)``."""
    return np.random.default_rng(stream_seed(root_seed, name))


def stream_int(root_seed: int, name: str) -> int:
    """Collapse a named stream to a single 32-bit seed for APIs that take one."""
    return int(stream_seed(root_seed, name).generate_state(1, np.uint32)[0])
