"""Deterministic seed derivation.

All randomness in the package flows from a single root seed that is split
into named streams (data, init.G, batch, panels, ...).  Streams are derived
by hashing, so adding a new stream never perturbs existing ones and the
scheme is reproducible across platforms and languages.
"""

import hashlib

import numpy as np


def derive_seed(root_seed: int, stream: str) -> int:
    """Derive a 63-bit seed for a named stream from the root seed."""
    digest = hashlib.sha256(f"{root_seed}:{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def make_generator(root_seed: int, stream: str) -> np.random.Generator:
    """A numpy Generator seeded from the named stream of the root seed."""
    return np.random.Generator(np.random.PCG64(derive_seed(root_seed, stream)))
