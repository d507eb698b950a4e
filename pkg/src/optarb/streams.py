"""Deterministic derivation of independent RNG streams.

Every estimator derives child generators from ``(seed, key...)`` tuples so
that results depend only on the configuration, never on scheduling or
thread count. Spawn keys act as a counter-based split of the master seed:
the stream for a given key is the same no matter how many other streams
were created before it.
"""

from __future__ import annotations

import numpy as np

# Stream namespaces; first key component, never reused across call sites.
DOMAIN_ESTIMATE = 0
DOMAIN_SURFACE = 1
DOMAIN_TIME_SWEEP = 2
DOMAIN_EULER = 3
DOMAIN_BOUNDARY = 4
DOMAIN_BSDE = 5


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream identified by ``(seed, *key)``."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(seq)


def path_stream_keys(seed: int, n_paths: int, *prefix: int) -> tuple[tuple[int, ...], ...]:
    """Stream identifiers recorded per path, for provenance and pairing."""
    return tuple((int(seed), *prefix, p) for p in range(int(n_paths)))
