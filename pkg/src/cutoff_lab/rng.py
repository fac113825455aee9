"""Seed discipline.

One master seed per run; every independent stream derives from it through a
SeedSequence spawn key, so replica layouts and worker counts never change
the draws. The generator is numpy's PCG64, whose bit stream is stable for a
fixed generator version; run manifests record the identifier below.
"""

from __future__ import annotations

import numpy as np

RNG_ID = "numpy:PCG64"


def child_sequence(master_seed: int, *key: int) -> np.random.SeedSequence:
    """Deterministic child of the master seed, addressed by an integer path."""
    return np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))


def child_rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(child_sequence(master_seed, *key))


def derive_seed(master_seed: int, *key: int) -> int:
    """A plain integer seed derived from the master, for APIs taking seeds."""
    return int(child_sequence(master_seed, *key).generate_state(1, np.uint64)[0])
