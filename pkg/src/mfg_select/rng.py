"""Counter-based random streams.

Every stream is a Philox generator keyed by (master seed, experiment kind,
index).  Streams never depend on how many others were drawn before them, so
ensembles can be split across workers in any order and reproduce bit for bit.
"""

from __future__ import annotations

import os

import numpy as np

KINDS = {
    "mfg": 1,
    "nplayer": 2,
    "cost": 3,
    "hitting": 4,
    "picard": 5,
}


def stream(seed: int, kind: str, index: int) -> np.random.Generator:
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    key = np.random.SeedSequence((int(seed), KINDS[kind], int(index))).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normals(seed: int, kind: str, index: int, shape) -> np.ndarray:
    return stream(seed, kind, index).standard_normal(shape)


def worker_count(requested: int | None = None) -> int:
    """Resolve a thread count from an explicit value or MFG_SELECT_THREADS."""
    if requested is None:
        env = os.environ.get("MFG_SELECT_THREADS")
        requested = int(env) if env else 1
    if requested < 1:
        raise ValueError("thread count must be at least 1")
    return requested
