"""Seeded random streams.

Every stream is a numpy ``Generator`` over the PCG64 bit generator, keyed
through ``SeedSequence`` entropy tuples.  PCG64 and SeedSequence are fixed,
documented algorithms, so a given key produces the same draws on every
platform and numpy release that keeps the ``Generator`` API stable.
"""

import numpy as np

# Domain tags keep streams for different purposes independent even when the
# user-facing seed collides.
PARTITION = 0x5041
SYNTHETIC = 0x5359
WORKER = 0x574B


def stream(seed, *keys):
    """Return a Generator keyed by ``(seed, *keys)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def worker_stream(seed, worker_id, stage, round_):
    """Per-round stream for one worker's mini-batch sampling."""
    return stream(seed, WORKER, worker_id, stage, round_)


def minibatch_order(seed, worker_id, stage, round_, n_local, batch):
    """Positions of a mini-batch, uniform without replacement, in visiting order."""
    return worker_stream(seed, worker_id, stage, round_).permutation(n_local)[:batch]
