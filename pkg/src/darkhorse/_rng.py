"""Named, splittable random streams.

Every random draw in the package goes through :func:`stream`, which keys a
counter-based Philox generator on ``(seed, name, *index)``.  Two streams with
different names or indices are statistically independent, and adding matches
or trials never shifts the draws of existing ones.
"""
import zlib

import numpy as np

STREAMS = ("generate", "split", "init", "shuffle", "baseline", "trial")


def _name_key(name):
    if name not in STREAMS:
        raise ValueError(f"unknown random stream {name!r}; expected one of {STREAMS}")
    return zlib.crc32(name.encode("ascii"))


def stream(seed, name, *index):
    """Return a fresh ``numpy.random.Generator`` for the named sub-stream."""
    seq = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(_name_key(name), *map(int, index)))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed, index):
    """Independent 63-bit seed for trial ``index`` of a run seeded with ``seed``."""
    seq = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(_name_key("trial"), int(index)))
    return int(seq.generate_state(1, np.uint64)[0] >> np.uint64(1))
