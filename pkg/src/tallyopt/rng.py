"""Labeled random streams.

Every stochastic step draws from a generator derived from the base seed and
a tuple of labels (stage name, level index, repeat index, point index, ...),
so any step can be reproduced without replaying the ones before it.
"""

import zlib

import numpy as np


def _label_key(label):
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"integer labels must be non-negative, got {label}")
        return int(label)
    if isinstance(label, float):
        label = repr(label)
    return zlib.crc32(str(label).encode("utf-8"))


def stream_seed(seed, *labels):
    """Return the SeedSequence for ``seed`` and ``labels``."""
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_label_key(x) for x in labels))


def derive_rng(seed, *labels):
    """Independent ``numpy.random.Generator`` for the labeled stream."""
    return np.random.Generator(np.random.PCG64(stream_seed(seed, *labels)))


def derive_int(seed, *labels):
    """A 32-bit integer seed for the labeled stream (for nested components)."""
    return int(stream_seed(seed, *labels).generate_state(1)[0])
