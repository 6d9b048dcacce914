"""Seed derivation for named random sub-streams.

A master seed is split into independent, named sub-streams (demand, supply,
decisions, ...) by hashing the stream name together with the seed, so that
varying one input dimension never perturbs the draws of another.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, *labels: object) -> int:
    """Derive a 64-bit child seed from a master seed and a label path.

    Labels are stringified and joined, so ``derive_seed(7, "demand")`` and
    ``derive_seed(7, "grid", "n_drivers=5", 3)`` give unrelated streams.
    """
    key = str(int(master)) + "\x1f" + "\x1f".join(str(x) for x in labels)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & _MASK64


def substream(master: int, *labels: object) -> np.random.Generator:
    """A numpy Generator for the named sub-stream of ``master``."""
    return np.random.default_rng(derive_seed(master, *labels))
