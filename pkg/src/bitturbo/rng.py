"""Counter-based random streams.

Every random draw in the package comes from a Philox counter-based
generator keyed by ``(seed, stream_id)``.  Streams are stateless given
their key, so parallel workers (SNR sweep points, ensemble members) can
draw independent, reproducible noise without coordination, and two runs
with the same seed produce bitwise-identical results.

Gaussian variates are produced by an explicit Box-Muller transform over
raw Philox 64-bit words rather than the generator's native normal
method, pinning the exact output sequence independent of numpy's
ziggurat implementation.
"""

from __future__ import annotations

import numpy as np

# Stream tags: high byte of the stream id. Keeps purposes disjoint.
TAG_INIT = 1        # parameter initialization
TAG_INTERLEAVER = 2
TAG_TRAIN = 3       # training data bits
TAG_TRAIN_NOISE = 4
TAG_VAL = 5         # held-out validation batches
TAG_EVAL_BITS = 6
TAG_EVAL_NOISE = 7
TAG_BENCH = 8
TAG_TEST = 15       # free for test suites

_MASK64 = (1 << 64) - 1
_INV_2_53 = 2.0 ** -53


def stream_id(tag: int, *indices: int) -> int:
    """Mix a tag and index tuple into one 64-bit stream id.

    splitmix64-style mixing; distinct (tag, indices) tuples of the kinds
    used here (small nonnegative ints) do not collide in practice.
    """
    h = (tag & 0xFF) << 56
    for ix in indices:
        h = (h + (ix & _MASK64) + 0x9E3779B97F4A7C15) & _MASK64
        h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
        h = (h ^ (h >> 27)) * 0x94D049BB133111EB & _MASK64
        h ^= h >> 31
    return h


def generator(seed: int, tag: int, *indices: int) -> np.random.Generator:
    """Generator over a Philox stream keyed by (seed, tag, indices)."""
    return np.random.Generator(np.random.Philox(key=[seed & _MASK64, stream_id(tag, *indices)]))


def uniforms(seed: int, tag: int, *indices: int, n: int) -> np.ndarray:
    """n doubles in the open interval (0, 1) from raw Philox words."""
    bg = np.random.Philox(key=[seed & _MASK64, stream_id(tag, *indices)])
    raw = bg.random_raw(n)
    # 53 significant bits, offset by half an ulp so 0 and 1 are excluded.
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53


def standard_normals(seed: int, tag: int, *indices: int, n: int) -> np.ndarray:
    """n standard normal doubles via Box-Muller over a Philox stream."""
    if n == 0:
        return np.empty(0)
    pairs = (n + 1) // 2
    u = uniforms(seed, tag, *indices, n=2 * pairs)
    u1, u2 = u[:pairs], u[pairs:]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]
