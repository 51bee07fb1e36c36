"""Deterministic random streams.

Every stream is a ``numpy.random.Generator`` over the PCG64 bit generator,
seeded by ``SeedSequence(entropy=master_seed, spawn_key=key)``. The key is a
tuple of non-negative integers naming the stream's position in the
experiment, e.g. ``(scenario_id, rep)`` for a Monte Carlo repetition and
``(scenario_id, rep, STREAM_BOOT, strategy, b)`` for one bootstrap replicate
inside it. Streams with different keys are statistically independent, and a
stream's draws depend only on (master_seed, key), never on which worker or
in which order it is consumed.
"""

from __future__ import annotations

import numpy as np

# second-level tags under a repetition key
STREAM_SUBSAMPLE = 0
STREAM_BOOT = 1
STREAM_COVARIATES = 2
STREAM_REALIZE = 3


def stream(seed: int, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))
