"""Random-stream derivation.

Every random stream in a run comes from the master seed plus a path of names
and ids: ``derive_seed(master, "phase1", review_id, replication)``. The path is
joined with ``/`` and hashed with BLAKE2b, so streams are independent of the
order in which they are requested.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *path) -> int:
    key = "/".join([str(int(master))] + [str(p) for p in path]).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def stream(master: int, *path) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *path))
