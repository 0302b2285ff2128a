import numpy as np


def stream(seed, *keys):
    """Independent Philox4x64 stream for ``(seed, *keys)``.

    Philox is a counter-based generator with fixed published round constants,
    so a stream is reproducible across runs and platforms.
    """
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


# stream identifiers
EMISSION, SOURCE, TARGET, PROBES, NOISE = 1, 2, 3, 4, 5
INIT, BC_BATCH, OT_BATCH, EVAL = 11, 12, 13, 14
