"""Reproducible random streams.

All randomness flows through Philox (a counter-based 64-bit generator)
seeded via ``SeedSequence(seed, spawn_key=key)``, so every consumer --
population generation, sample draws, tuning, bagging, bootstrap replicates
-- gets an independent stream addressed by a small integer key path.
Reruns with the same seed and key reproduce draws bit-for-bit on any
platform.

Normal deviates use the inverse-CDF transform instead of the generator's
ziggurat method, again for cross-platform bit stability.
"""

import numpy as np
from scipy.special import ndtri

# purpose codes used as the first element after the replicate index
POPULATION = 0
SURVEY_DRAW = 1
NONPROB_DRAW = 2
TUNING = 3
BOOTSTRAP_NONPROB = 4
BOOTSTRAP_SURVEY = 5
BAGGING = 6

_TINY = 1e-300


def stream(seed, *key):
    """Return a Generator for the stream addressed by (seed, *key)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def standard_normal(rng, size):
    """Inverse-CDF standard normals (bit-stable across platforms)."""
    u = rng.random(size)
    return ndtri(np.maximum(u, _TINY))
