"""Deployable packed conv layers: batchnorm/sign folding and dispatch.

Freezing a trained binary or ternary conv layer collapses its
(conv, batchnorm, sign) triple into pure integer bit-ops:

  * the pre-activation count y = sum of +-1 (or ternary) products plus
    the integer bias code is an exact integer;
  * gamma * (y - mean)/sqrt(var + eps) + beta >= 0 becomes y >= t with
    t = ceil(mean - beta*sqrt(var+eps)/gamma) for gamma > 0;
  * a negative gamma flips the comparison, which is absorbed by negating
    that output channel's weights and bias and using t = ceil(-r);
  * gamma == 0 makes the channel constant sign(beta); the threshold is
    clamped past the attainable count range to force it.

Thresholds are also clamped to that range, so they always fit in int32
for serialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend_module
from .bitplane import pack_rows, unpack_rows, words_needed


@dataclass
class PackedConvLayer:
    """Bitplane weights plus folded integer thresholds for one conv layer.

    ``threshold`` None means the layer is a linear head: the kernel
    returns raw integer pre-activations instead of sign bits.
    """

    c_in: int
    c_out: int
    k: int
    weight_sign: np.ndarray       # uint64 (c_out, n_words) over c_in*k taps
    weight_mask: np.ndarray       # uint64 (c_out, n_words); all-ones for binary
    bias_code: np.ndarray         # int32 (c_out,)
    threshold: np.ndarray | None  # int32 (c_out,) or None for linear heads

    def __post_init__(self):
        self.weight_sign = np.ascontiguousarray(self.weight_sign, dtype=np.uint64)
        self.weight_mask = np.ascontiguousarray(self.weight_mask, dtype=np.uint64)
        self.bias_code = np.ascontiguousarray(self.bias_code, dtype=np.int32)
        if self.threshold is not None:
            self.threshold = np.ascontiguousarray(self.threshold, dtype=np.int32)
        n_words = words_needed(self.c_in * self.k)
        if self.weight_sign.shape != (self.c_out, n_words):
            raise ValueError("weight_sign shape does not match layer dims")
        if self.weight_mask.shape != (self.c_out, n_words):
            raise ValueError("weight_mask shape does not match layer dims")
        if np.any(self.weight_sign & ~self.weight_mask):
            raise ValueError("non-canonical planes: sign bit set where mask is 0")

    @property
    def n_words(self) -> int:
        return words_needed(self.c_in * self.k)

    def weights_ternary(self) -> np.ndarray:
        """Unpacked float weights in {-1, 0, +1}, shape (c_out, c_in, k).

        Planes store taps kernel-position-major (tap index j*c_in + ci).
        """
        sign = unpack_rows(self.weight_sign, self.c_in * self.k).astype(np.float64) * 2 - 1
        mask = unpack_rows(self.weight_mask, self.c_in * self.k).astype(np.float64)
        return (sign * mask).reshape(self.c_out, self.k, self.c_in).transpose(0, 2, 1)

    def storage_bits(self) -> int:
        """Deployed weight bits (1 per tap) plus bias and threshold codes."""
        aux = 32 * self.c_out * (1 if self.threshold is None else 2)
        return self.c_out * self.c_in * self.k + aux

    # --- serialization (container PACK payloads) ---

    def to_bytes(self) -> bytes:
        head = np.array(
            [self.c_in, self.c_out, self.k, 0 if self.threshold is None else 1],
            dtype="<u4",
        )
        thr = (
            np.zeros(0, dtype="<i4")
            if self.threshold is None
            else self.threshold.astype("<i4")
        )
        return (
            head.tobytes()
            + self.bias_code.astype("<i4").tobytes()
            + thr.tobytes()
            + self.weight_sign.astype("<u8").tobytes()
            + self.weight_mask.astype("<u8").tobytes()
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple["PackedConvLayer", int]:
        c_in, c_out, k, has_thr = np.frombuffer(blob[:16], dtype="<u4")
        off = 16
        bias = np.frombuffer(blob[off:off + 4 * c_out], dtype="<i4").copy()
        off += 4 * c_out
        thr = None
        if has_thr:
            thr = np.frombuffer(blob[off:off + 4 * c_out], dtype="<i4").copy()
            off += 4 * c_out
        n_words = words_needed(int(c_in) * int(k))
        nbytes = 8 * int(c_out) * n_words
        ws = np.frombuffer(blob[off:off + nbytes], dtype="<u8").reshape(c_out, n_words).copy()
        off += nbytes
        wm = np.frombuffer(blob[off:off + nbytes], dtype="<u8").reshape(c_out, n_words).copy()
        off += nbytes
        return cls(int(c_in), int(c_out), int(k), ws, wm, bias, thr), off


def pack_activations(a: np.ndarray) -> np.ndarray:
    """Pack +-1 activations (..., h) into uint64 planes (..., words)."""
    a = np.asarray(a)
    if not np.all(np.abs(a) == 1):
        raise ValueError("activations must be +-1 before packing")
    return pack_rows((a > 0).astype(np.uint64))


def unpack_activations(words: np.ndarray, h: int) -> np.ndarray:
    return unpack_rows(words, h).astype(np.float64) * 2.0 - 1.0


def fold_sign_threshold(
    gamma: np.ndarray,
    beta: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    eps: float,
    max_count: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel (flip, integer threshold) for sign(batchnorm(count)).

    Returns flip as +-1 multipliers for the channel's weights/bias and a
    threshold clamped to [-(max_count+2), max_count+2] so out-of-range
    values encode constant channels.
    """
    sd = np.sqrt(var + eps)
    clamp = max_count + 2
    flip = np.where(gamma < 0.0, -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = mean - beta * sd / gamma
    thr = np.ceil(flip * r)
    # gamma == 0: constant sign(beta)
    const = gamma == 0.0
    thr = np.where(const, np.where(beta >= 0.0, -clamp, clamp), thr)
    thr = np.clip(thr, -clamp, clamp)
    return flip, thr.astype(np.int64)


def freeze_conv_layer(
    w_q: np.ndarray,
    bias_q: np.ndarray | None,
    gamma: np.ndarray | None,
    beta: np.ndarray | None,
    mean: np.ndarray | None,
    var: np.ndarray | None,
    eps: float = 1e-5,
) -> PackedConvLayer:
    """Pack a quantized conv layer, folding (batchnorm, sign) if present.

    w_q: (c_out, c_in, k) in {-1, 0, +1}; bias_q integer-valued or None.
    Without batchnorm params the layer is a linear head (threshold None).
    """
    w_q = np.asarray(w_q, dtype=np.float64)
    c_out, c_in, k = w_q.shape
    if not np.all(np.isin(w_q, (-1.0, 0.0, 1.0))):
        raise ValueError("freeze expects weights in {-1, 0, +1}")
    b = np.zeros(c_out) if bias_q is None else np.asarray(bias_q, dtype=np.float64)
    if not np.all(b == np.round(b)):
        raise ValueError("freeze expects an integer-valued bias code")

    if gamma is None:
        flip = np.ones(c_out)
        thr = None
    else:
        max_count = c_in * k + int(np.max(np.abs(b)))
        flip, thr_i = fold_sign_threshold(gamma, beta, mean, var, eps, max_count)
        thr = thr_i.astype(np.int32)

    w_eff = w_q * flip[:, None, None]
    b_eff = (b * flip).astype(np.int32)
    taps = w_eff.transpose(0, 2, 1).reshape(c_out, k * c_in)  # kernel-position-major
    sign = pack_rows((taps > 0).astype(np.uint64))
    mask = pack_rows((taps != 0).astype(np.uint64))
    return PackedConvLayer(c_in, c_out, k, sign, mask, b_eff, thr)


def packed_conv1d(
    x_words: np.ndarray, h: int, layer: PackedConvLayer, backend: str | None = None
) -> np.ndarray:
    """Sign-activation packed conv: bit output (b, c_out, words_h)."""
    if layer.threshold is None:
        raise ValueError("layer has no thresholds; use packed_conv1d_counts")
    mod = backend_module(backend)
    return mod.packed_conv(
        x_words, h, layer.weight_sign, layer.weight_mask,
        layer.bias_code.astype(np.int64), layer.threshold.astype(np.int64), layer.k,
    )


def packed_conv1d_counts(
    x_words: np.ndarray, h: int, layer: PackedConvLayer, backend: str | None = None
) -> np.ndarray:
    """Linear-head packed conv: integer pre-activations (b, c_out, h)."""
    mod = backend_module(backend)
    return mod.packed_conv(
        x_words, h, layer.weight_sign, layer.weight_mask,
        layer.bias_code.astype(np.int64), None, layer.k,
    )


def float_conv1d_naive(
    x: np.ndarray, w: np.ndarray, bias: np.ndarray | None, backend: str | None = None
) -> np.ndarray:
    """The scalar float reference conv (benchmark baseline)."""
    return backend_module(backend).float_conv1d_naive(x, w, bias)
