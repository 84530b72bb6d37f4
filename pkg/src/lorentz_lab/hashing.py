"""Counter-based hashing of (seed, cell) into uniforms.

SplitMix64 finalizer chained over the seed and the two cell coordinates. The
scalar (pure int) and vectorized (numpy uint64) paths are bit-identical.
"""
from __future__ import annotations

import numpy as np

MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * _M1 & MASK
    z = (z ^ (z >> 27)) * _M2 & MASK
    return z ^ (z >> 31)


def cell_key(seed: int, i: int, j: int) -> int:
    h = _mix((seed + _GOLDEN) & MASK)
    h = _mix((h + (i & MASK)) & MASK)
    return _mix((h ^ (j & MASK)) & MASK)


def cell_uniforms(seed: int, i: int, j: int, count: int) -> list[float]:
    key = cell_key(seed, i, j)
    return [(_mix((key + (k + 1) * _GOLDEN) & MASK) >> 11) * _INV53 for k in range(count)]


def _mix_v(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def cell_uniforms_v(seed, i, j, count: int) -> np.ndarray:
    """Vectorized ``cell_uniforms``; ``seed``, ``i``, ``j`` broadcast. Returns (..., count)."""
    seed = np.asarray(seed, dtype=np.int64).astype(np.uint64)
    i = np.asarray(i, dtype=np.int64).astype(np.uint64)
    j = np.asarray(j, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = _mix_v(seed + np.uint64(_GOLDEN))
        h = _mix_v(h + i)
        key = _mix_v(h ^ j)
        ks = (np.arange(1, count + 1, dtype=np.uint64) * np.uint64(_GOLDEN))
        out = _mix_v(key[..., None] + ks)
    return (out >> np.uint64(11)).astype(np.float64) * _INV53


def derive_seed(seed: int, stream: int) -> int:
    """Independent 63-bit seed for a sub-stream (e.g. a trial index)."""
    return cell_key(seed, stream, 0x5EED) >> 1
