"""Counter-based random streams.

Every stream is addressed by ``(seed, domain, *counters)``. Two streams with
different addresses are statistically independent, and any stream can be
materialized without touching its neighbours, so work split over threads
reproduces bit for bit.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _domain_id(domain: str) -> int:
    return zlib.crc32(domain.encode("utf-8"))


def stream(seed: int, domain: str, *counters: int) -> np.random.Generator:
    """Return the generator at address ``(seed, domain, *counters)``."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=(_domain_id(domain), *(int(c) for c in counters)),
    )
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, domain: str, *counters: int) -> int:
    """Derive a 64-bit child seed, for handing to another component."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=(_domain_id(domain), *(int(c) for c in counters)),
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])
