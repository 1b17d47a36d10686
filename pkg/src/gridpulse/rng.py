"""Deterministic counter-based random substreams.

Every draw is addressed by a (seed, stream_id, counter) triple and produced by
a chain of splitmix64 finalizers, so any element of any stream can be computed
independently, in any order, on any platform, with no shared state. Streams
keyed by different ids never interact, which is what makes scenario results
reproducible regardless of worker scheduling.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 2.0 ** -53


def splitmix64(z: np.ndarray | int) -> np.ndarray:
    """Apply the splitmix64 finalizer elementwise, returning uint64 values."""
    z = np.atleast_1d(np.asarray(z, dtype=np.uint64))
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def uniforms(seed: int, stream_ids, counter: int = 0) -> np.ndarray:
    """Draw one double in [0, 1) per stream id at the given counter position.

    Parameters
    ----------
    seed : int
        Master seed. Negative seeds are folded into the uint64 domain.
    stream_ids : array_like of int
        Substream keys, typically branch ids. One output per key.
    counter : int
        Position within each substream. Successive draws for the same key
        use successive counters.
    """
    ids = np.atleast_1d(np.asarray(stream_ids, dtype=np.uint64))
    base = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    with np.errstate(over="ignore"):
        h = splitmix64(base ^ ids)
        h = splitmix64(h ^ np.uint64(counter & 0xFFFFFFFFFFFFFFFF))
    return (h >> np.uint64(11)).astype(np.float64) * _INV_2_53


def uniform(seed: int, stream_id: int, counter: int = 0) -> float:
    """Scalar convenience wrapper around :func:`uniforms`."""
    return float(uniforms(seed, [stream_id], counter)[0])
