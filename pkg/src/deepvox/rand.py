"""Deterministic RNG substreams.

Every stochastic component draws from a generator keyed by (master seed,
string label, integer indices...).  Streams are independent of call order
and of each other, so checkpoint resume does not need to serialize any
generator state: the stream for (seed, "ver", epoch, batch) is the same
whether reached in one run or two.
"""

import zlib

import numpy as np


def _entropy(key):
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        # SeedSequence entropy words must be non-negative
        return int(key) & 0xFFFFFFFFFFFFFFFF
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported stream key type: {type(key).__name__}")


def stream(*keys) -> np.random.Generator:
    """Generator for the substream addressed by `keys`."""
    if not keys:
        raise ValueError("at least one stream key is required")
    return np.random.default_rng(np.random.SeedSequence([_entropy(k) for k in keys]))


def stream_seed(*keys) -> int:
    """A derived 63-bit integer seed (for APIs that take a seed, not a Generator)."""
    return int(stream(*keys).integers(0, 2**63 - 1))
