"""Seeded random streams.

Every stream is a :class:`numpy.random.Generator` over PCG64, seeded from a
:class:`numpy.random.SeedSequence` whose spawn key is the CRC32 of a text label.
A single master seed therefore yields independent, reproducible streams for
initialization, dropout, shuffling and splitting that do not perturb each
other when one of them is consumed more or less.
"""

import zlib

import numpy as np

GENERATOR = "PCG64"


def rng_stream(seed, label=""):
    """Return the generator for ``label`` derived from the master ``seed``."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit value, got {seed}")
    key = (zlib.crc32(label.encode("utf-8")),) if label else ()
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))
