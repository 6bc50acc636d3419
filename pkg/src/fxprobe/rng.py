"""Counter-based random streams keyed by (seed, purpose, index).

Every consumer derives its own generator so results do not depend on the
order in which modules or workers draw numbers.
"""

import hashlib

import numpy as np


def _key(seed: int, tag: str, index: int) -> int:
    payload = f"{int(seed) & 0xFFFFFFFFFFFFFFFF}:{tag}:{int(index)}".encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:16], "little")


def derive_rng(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, tag, index)``."""
    return np.random.Generator(np.random.Philox(key=_key(seed, tag, index)))


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """A 63-bit integer seed derived the same way, for APIs that want an int."""
    return _key(seed, tag, index) & 0x7FFFFFFFFFFFFFFF
