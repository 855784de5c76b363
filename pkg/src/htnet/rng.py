"""Seed derivation for reproducible replications.

Replication ``r`` of a run with master seed ``s`` uses a Philox stream
seeded with ``s XOR r``.  A small ``stream`` tag keeps the pre-limit
simulator and the limit-process sampler on disjoint streams even when
they share a master seed.
"""
from __future__ import annotations

import os

import numpy as np

SIMULATOR_STREAM = 0
LIMIT_STREAM = 1


def replication_seed(master_seed: int, rep: int) -> int:
    return int(master_seed) ^ int(rep)


def make_rng(seed: int, stream: int = SIMULATOR_STREAM) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def replication_rng(master_seed: int, rep: int, stream: int = SIMULATOR_STREAM) -> np.random.Generator:
    return make_rng(replication_seed(master_seed, rep), stream)


def worker_count() -> int:
    env = os.environ.get("HTNET_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1
