"""Named RNG substreams derived from one root seed.

Each concern (parameter init, epoch shuffling, augmentation, phantom
rendering) draws from its own SeedSequence branch, so toggling augmentation
or regenerating data never perturbs initialization.
"""

import numpy as np

STREAMS = {"init": 0, "shuffle": 1, "augment": 2, "phantom": 3}


def stream_rng(seed, stream, *extra):
    """Generator for a named substream, optionally keyed by extra integers
    (epoch number, sample index)."""
    if stream not in STREAMS:
        raise KeyError(f"unknown RNG stream {stream!r}; known: {sorted(STREAMS)}")
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, STREAMS[stream], *[int(e) for e in extra]]
    return np.random.default_rng(np.random.SeedSequence(key))
