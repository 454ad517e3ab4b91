"""Splittable random streams.

Every replica owns an independent PCG64 generator seeded by
``SeedSequence(root_seed, spawn_key=key)``.  Keys are tuples of small
integers laid out as ``(study, role, [eps index], replica, [branch...])`` so
adding replicas or branches never perturbs existing streams, and two runs
that use the same key see the same noise (common-noise coupling).
"""

from __future__ import annotations

import numpy as np

__all__ = ["SLOW", "FAST", "STUDY", "NoiseStream", "replica_keys", "generator"]

SLOW = 1
FAST = 2

STUDY = {
    "simulate": 0,
    "fast": 1,
    "estimate": 2,
    "remainder": 3,
    "gap": 4,
    "converge": 5,
    "moments": 6,
    "holder": 7,
    "weak": 8,
    "ergodic": 9,
    "mixing": 10,
    "averaged": 11,
    "auxiliary": 12,
}


def generator(seed: int, key=()) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def replica_keys(prefix, replica_ids):
    prefix = tuple(int(p) for p in prefix)
    return [prefix + (int(r),) for r in replica_ids]


class NoiseStream:
    """Standard normal draws of shape ``(replicas, n_modes)`` per time step.

    Draws are made per replica in chunks of ``chunk`` steps; the chunk size
    is fixed so the sequence seen by a replica depends only on its key.
    """

    def __init__(self, seed: int, keys, n_modes: int, chunk: int = 512):
        self.seed = int(seed)
        self.keys = [tuple(k) for k in keys]
        self.n_modes = int(n_modes)
        self.chunk = int(chunk)
        self._gens = [generator(self.seed, k) for k in self.keys]
        self._buf = None
        self._pos = self.chunk

    @classmethod
    def for_replicas(cls, seed, prefix, replica_ids, n_modes, chunk=512):
        return cls(seed, replica_keys(prefix, replica_ids), n_modes, chunk)

    @property
    def replicas(self) -> int:
        return len(self.keys)

    def _refill(self):
        self._buf = np.stack([g.standard_normal((self.chunk, self.n_modes)) for g in self._gens],
                             axis=1)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos >= self.chunk:
            self._refill()
        out = self._buf[self._pos]
        self._pos += 1
        return out
