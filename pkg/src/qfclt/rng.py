"""Deterministic random-stream derivation.

One master seed per run; every task derives its own child stream from
``(kind, index)``. Adding new task kinds or extending an index range never
perturbs the streams of existing tasks, and reduction order is fixed by
index, so results are reproducible regardless of worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _kind_word(kind: str) -> int:
    digest = hashlib.sha256(kind.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def child_stream(master_seed: int, kind: str, index: int = 0) -> np.random.Generator:
    """Return the PCG64 generator for task ``(kind, index)`` under ``master_seed``."""
    if index < 0:
        raise ValueError("stream index must be nonnegative")
    seq = np.random.SeedSequence([int(master_seed), _kind_word(kind), int(index)])
    return np.random.Generator(np.random.PCG64(seq))


def child_streams(master_seed: int, kind: str, count: int) -> list[np.random.Generator]:
    """Streams for indices 0..count-1, one per parallel task."""
    return [child_stream(master_seed, kind, i) for i in range(count)]
