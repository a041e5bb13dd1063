"""Deterministic per-component random streams.

Every random draw in the package comes from a stream derived as
``stream(seed, name)``.  The split hashes the component name into the
SeedSequence entropy, so adding a new component never perturbs the draws of
existing ones, and the same (seed, name) pair always yields the same stream.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed, *names):
    """Return an independent numpy Generator for (seed, names...).

    `names` are joined with '/' and hashed (SHA-256); the first 16 digest
    bytes extend the SeedSequence entropy alongside the integer seed.
    """
    tag = "/".join(str(n) for n in names)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    words = np.frombuffer(digest[:16], dtype=np.uint32)
    entropy = [int(seed) & _MASK64] + [int(w) for w in words]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
