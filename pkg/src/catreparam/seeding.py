"""Reproducible rng streams: a 64-bit master seed plus (trial, stream) indices."""

import numpy as np

# named stream indices used across the package
STREAM_INIT = 0
STREAM_TRAIN = 1
STREAM_EVAL = 2
STREAM_DATA = 3
STREAM_BASELINE = 4


def make_rng(master_seed: int, trial: int = 0, stream: int = 0) -> np.random.Generator:
    """Independent generator fully determined by ``(master_seed, trial, stream)``."""
    if not 0 <= master_seed < 2**64:
        raise ValueError(f"master seed must fit in 64 bits, got {master_seed}")
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(trial), int(stream)))
    return np.random.Generator(np.random.PCG64(seq))
