"""Bit plane layout and word-level dot products.

Layout convention, fixed for serialization stability:
  * logical value +1 <-> bit 1, -1 <-> bit 0
  * LSB-first within a 64-bit word, little-endian word order
  * padding bits past ``n_valid`` are zero and masked out of every
    reduction

A ternary weight vector is a (sign, mask) plane pair: mask bit 0 means
the weight is zero, and the canonical form keeps sign bits clear
wherever the mask is clear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_BITS = np.arange(64, dtype=np.uint64)


def words_needed(n: int) -> int:
    return (n + 63) >> 6


def valid_mask_words(n: int) -> np.ndarray:
    """Words with the first n bits set."""
    w = words_needed(n)
    m = np.full(w, np.uint64(0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    tail = n & 63
    if w and tail:
        m[-1] = np.uint64((1 << tail) - 1)
    return m


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack an array of 0/1 values along the last axis into uint64 words."""
    bits = np.asarray(bits)
    n = bits.shape[-1]
    w = words_needed(n)
    padded = np.zeros(bits.shape[:-1] + (w * 64,), dtype=np.uint64)
    padded[..., :n] = bits
    grouped = padded.reshape(bits.shape[:-1] + (w, 64))
    return np.bitwise_or.reduce(grouped << _BITS, axis=-1)


def unpack_rows(words: np.ndarray, n: int) -> np.ndarray:
    """Inverse of pack_rows; returns uint8 0/1 with last axis length n."""
    words = np.asarray(words, dtype=np.uint64)
    bits = ((words[..., :, None] >> _BITS) & np.uint64(1)).astype(np.uint8)
    return bits.reshape(words.shape[:-1] + (words.shape[-1] * 64,))[..., :n]


@dataclass
class BitPlane:
    """A packed vector of +-1 values."""

    words: np.ndarray  # uint64, 1-D
    n_valid: int

    def __post_init__(self):
        self.words = np.ascontiguousarray(self.words, dtype=np.uint64)
        if self.words.ndim != 1:
            raise ValueError("BitPlane words must be 1-D")
        if len(self.words) != words_needed(self.n_valid):
            raise ValueError(
                f"{len(self.words)} words cannot hold exactly {self.n_valid} valid bits"
            )
        # padding bits must be zero
        vm = valid_mask_words(self.n_valid)
        if len(vm) and np.any(self.words & ~vm):
            raise ValueError("padding bits beyond n_valid must be zero")

    def popcount(self) -> int:
        return int(np.bitwise_count(self.words).sum())


def pack_bits(v: np.ndarray) -> BitPlane:
    """Pack a strict +-1 vector; bit i is set iff v[i] == +1."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ValueError("pack_bits expects a 1-D vector")
    if not np.all((v == 1) | (v == -1)):
        raise ValueError("pack_bits requires values in {-1, +1}")
    return BitPlane(pack_rows((v == 1).astype(np.uint64)), len(v))


def unpack_bits(plane: BitPlane) -> np.ndarray:
    """Back to a float64 +-1 vector."""
    return unpack_rows(plane.words, plane.n_valid).astype(np.float64) * 2.0 - 1.0


def _check_lengths(a: BitPlane, b: BitPlane) -> None:
    if a.n_valid != b.n_valid:
        raise ValueError(f"length mismatch: {a.n_valid} vs {b.n_valid}")


def xnor_dot(a: BitPlane, w: BitPlane) -> int:
    """Sum of elementwise products under +-1 semantics.

    2 * popcount(xnor(a, w) & valid) - n_valid
    """
    _check_lengths(a, w)
    vm = valid_mask_words(a.n_valid)
    agree = np.bitwise_count(~(a.words ^ w.words) & vm).sum()
    return int(2 * int(agree) - a.n_valid)


def ternary_dot(a: BitPlane, w_sign: BitPlane, w_mask: BitPlane) -> int:
    """Sum of t_i * a_i with t in {-1, 0, +1} encoded as (sign, mask) planes.

    2 * popcount(~(a ^ sign) & mask & valid) - popcount(mask & valid)
    """
    _check_lengths(a, w_sign)
    _check_lengths(a, w_mask)
    vm = valid_mask_words(a.n_valid)
    if np.any(w_sign.words & ~w_mask.words & vm):
        raise ValueError("non-canonical ternary planes: sign bit set where mask is 0")
    m = w_mask.words & vm
    agree = int(np.bitwise_count(~(a.words ^ w_sign.words) & m).sum())
    support = int(np.bitwise_count(m).sum())
    return 2 * agree - support
