"""Seeding and hashing helpers shared across the package."""

from __future__ import annotations

import hashlib
import json

import numpy as np


def canonical_json(obj) -> str:
    """Deterministic JSON serialization (sorted keys, no whitespace)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    """sha256 hex digest of an object's canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def seeded_rng(*keys) -> np.random.Generator:
    """Generator derived deterministically from a tuple of ints/strings.

    String keys are hashed so e.g. (seed, clip_id) yields a stable stream
    independent of generation order or platform.
    """
    words: list[int] = []
    for k in keys:
        if isinstance(k, (int, np.integer)):
            words.append(int(k) & 0xFFFFFFFF)
            words.append((int(k) >> 32) & 0xFFFFFFFF)
        else:
            h = hashlib.sha256(str(k).encode("utf-8")).digest()
            words.extend(int.from_bytes(h[i:i + 4], "little") for i in range(0, 16, 4))
    return np.random.default_rng(np.random.SeedSequence(words))
