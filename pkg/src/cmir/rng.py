"""Counter-based random streams.

Every random draw in the package flows from a root seed through
`stream(root, *labels)`. The Philox key is a hash of the label tuple, so
streams are order-independent: drawing for (seed, "noise", env=3) gives the
same numbers no matter what was drawn before.
"""

import hashlib

import numpy as np


def stream(root_seed, *labels) -> np.random.Generator:
    """Return a generator keyed on (root_seed, *labels)."""
    tag = repr((int(root_seed),) + tuple(labels)).encode()
    digest = hashlib.blake2b(tag, digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(root_seed, *labels) -> int:
    """Collapse (root_seed, *labels) into a plain integer seed."""
    tag = repr((int(root_seed),) + tuple(labels)).encode()
    digest = hashlib.blake2b(tag, digest_size=8).digest()
    return int.from_bytes(digest, "little")
