"""Seedable random generation used everywhere in the package.

All randomness flows through PCG64 generators keyed by explicit integer
seed parts, so any run is reproducible from its configuration alone.
Sub-streams are derived with ``numpy.random.SeedSequence``, which gives
independent, order-insensitive streams: generating dataset sample ``i``
in parallel or serially produces identical bytes.
"""

import numpy as np


def generator(*seed_parts: int) -> np.random.Generator:
    """Return a PCG64 generator keyed by one or more integer seed parts."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed_parts)))
