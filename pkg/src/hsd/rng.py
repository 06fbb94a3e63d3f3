"""Seeded PRNG family with labeled substreams.

Every random draw in the project comes from ``substream(seed, *labels)`` so that
corpus generation, noise injection and model drift never share state.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_words(label) -> list[int]:
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def substream(seed: int, *labels) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    for label in labels:
        words.extend(_label_words(label))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def draw_different(rng: np.random.Generator, ids: tuple[int, ...], token: int) -> int:
    """Uniform draw from sorted ``ids`` that is never ``token``."""
    try:
        pos = ids.index(token)
    except ValueError:
        return ids[int(rng.integers(len(ids)))]
    k = int(rng.integers(len(ids) - 1))
    return ids[k if k < pos else k + 1]
