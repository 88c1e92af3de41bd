import numpy as np


def derive_rng(seed, *keys):
    """Independent generator for the stream named by ``keys`` under ``seed``.

    Streams with different keys are statistically independent, so work can be
    split across processes without depending on iteration order.
    """
    keys = tuple(int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=keys))
