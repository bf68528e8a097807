"""Deterministic random sub-streams.

Every consumer asks for a generator keyed by a purpose and integer
coordinates (step, layer, chunk, ...). Streams never share state, so the
order in which components draw cannot change any result.
"""

from __future__ import annotations

import enum

import numpy as np


class Stream(enum.IntEnum):
    SIGMA_DRIFT = 1
    EVAL_NOISE = 2
    CALIB_PROBE = 3
    REMAP_PROBE = 4
    MONITOR_PROBE = 5
    CHUNK_SELECT = 6
    MONITOR_SUBSET = 7
    DATASET = 8
    INIT = 9
    TRIAL = 10


def substream(seed: int, purpose: Stream | int, *coords: int) -> np.random.Generator:
    key = (int(purpose), *(int(c) for c in coords))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))
