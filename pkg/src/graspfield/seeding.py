"""Deterministic RNG derivation.

Every stochastic stage derives its generator from the root seed plus a stable
integer tag path, so independent stages never share streams and reruns with
the same root seed reproduce every draw bit for bit.
"""

import numpy as np

# stage tags: stable small ints, never reorder
SCENE = 1
VIEW = 2
SAMPLER = 3
SUBSAMPLE = 4
OCC_SAMPLES = 5
NOISE = 6
INIT = 7
SHUFFLE = 8
BALANCE = 9
ROUND = 10


def derive_rng(root_seed: int, *path: int) -> np.random.Generator:
    """Generator for stage `path` under `root_seed`.

    Args:
        root_seed: nonnegative root seed of the run.
        path: stage tag followed by optional indices (scene id, epoch, ...).

    Returns:
        Independent np.random.Generator, deterministic in (root_seed, path).
    """
    ss = np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))
