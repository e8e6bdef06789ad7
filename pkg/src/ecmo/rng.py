"""Named derivation of random streams from a single root seed."""

import zlib

import numpy as np


def derive_rng(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, name, index)``.

    Streams for different names never share state, so adding a consumer
    does not perturb existing ones.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8")), int(index)])
