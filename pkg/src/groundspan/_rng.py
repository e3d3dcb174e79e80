"""Seed plumbing: every stochastic call gets its own stream keyed by (master seed, labels)."""
import zlib

import numpy as np


def _label_key(label):
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf8"))


def substream(seed, *labels):
    """Independent generator for ``(seed, *labels)``; identical inputs give identical streams."""
    if isinstance(seed, np.random.Generator):
        return seed
    key = tuple(_label_key(label) for label in labels)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
