"""Deterministic PRNG streams.

Every random draw in the package flows through substream(), which builds a
PCG64 generator from numpy's SeedSequence with a (domain, stream) spawn key.
PCG64 is seedable and platform-independent, so identical seeds give identical
streams everywhere; the domain tag keeps e.g. a dataset seeded with 7 and an
encoder seeded with 7 on unrelated streams.
"""

from __future__ import annotations

import numpy as np

# Domain tags for spawn keys. Streams within a domain are documented at the
# call sites that consume them.
DOMAIN_SYNTH = 0
DOMAIN_ENCODER = 1
DOMAIN_PROMPT = 2
DOMAIN_TRAIN = 3


def substream(seed: int, domain: int, stream: int) -> np.random.Generator:
    """Return an independent generator for (seed, domain, stream)."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(domain, stream))
    return np.random.Generator(np.random.PCG64(seq))


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """n independent unit vectors of dimension dim, rows of a (n, dim) array."""
    vecs = rng.standard_normal((n, dim))
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs / norms
