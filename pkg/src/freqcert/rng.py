"""Seeded random streams.

Every stream is a numpy ``Philox4x64-10`` counter-based generator.  Its
128-bit key is ``(seed mod 2**64, tag)`` where ``tag`` is the first 8 bytes
(little endian) of ``blake2b`` over the ``repr`` of the stream labels.
Uniform doubles come from ``Generator.random`` (53-bit mantissa
construction), so two implementations that follow this recipe draw the
same numbers.
"""
import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_key(seed, *labels):
    digest = hashlib.blake2b(repr(tuple(labels)).encode("utf-8"), digest_size=8).digest()
    tag = int.from_bytes(digest, "little")
    return np.array([int(seed) & _MASK64, tag], dtype=np.uint64)


def stream(seed, *labels):
    """Independent generator for ``(seed, *labels)``."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *labels)))
