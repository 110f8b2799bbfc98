"""Deterministic RNG derivation shared by every stochastic component.

All randomness flows through named streams derived from a single master
seed, so reruns are bit-identical and independent streams never interact
(a requirement for the step-for-step objective-reduction contract).
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_to_int(tag: int | str) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & _MASK64
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def subseed(master: int, *tags: int | str) -> int:
    """Derive a 64-bit seed from a master seed and a path of tags.

    Stable across platforms and numpy versions (sha256 + SeedSequence).
    """
    words = [int(master) & _MASK64] + [_tag_to_int(t) for t in tags]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])


def stream(master: int, *tags: int | str) -> np.random.Generator:
    """Named counter-based generator for a (seed, purpose) pair."""
    return np.random.Generator(np.random.Philox(key=subseed(master, *tags)))


def item_stream(dataset_seed: int, item_index: int) -> np.random.Generator:
    """Per-item generator: bit-identical regardless of worker chunking."""
    key = np.array([int(dataset_seed) & _MASK64, int(item_index) & _MASK64],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
