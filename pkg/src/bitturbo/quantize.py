"""Binarization, ternarization, STE gradients, latent clipping, post-training quantization.

Forward rules:
  * binary:  sign(r) with sign(0) = +1
  * ternary: +1 if r > delta, 0 if |r| <= delta, -1 if r < -delta,
    with delta = 0.7 * mean(|r|) over the whole per-layer tensor
  * post-quant: per-layer symmetric uniform codebook with 2^q levels
    spanning [-max|w|, +max|w|]

Backward (straight-through): grad_r = grad_out * 1{|r| <= 1}, boundary
inclusive, identical for binary and ternary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _finish

TERNARY_DELTA_FACTOR = 0.7
POST_QUANT_BITS = (1, 2, 4, 8)


@dataclass(frozen=True)
class QuantMode:
    """Which compression applies to a model, and to what."""

    kind: str                 # real | binary | ternary | quant
    q: int | None = None      # bits, quant only

    def __post_init__(self):
        if self.kind not in ("real", "binary", "ternary", "quant"):
            raise ValueError(f"unknown quantization kind {self.kind!r}")
        if self.kind == "quant":
            if self.q not in POST_QUANT_BITS:
                raise ValueError(f"post-quant bits must be one of {POST_QUANT_BITS}, got {self.q}")
        elif self.q is not None:
            raise ValueError("bit width is only meaningful for kind='quant'")

    @property
    def quantizes_weights(self) -> bool:
        return self.kind != "real"

    @property
    def binary_activations(self) -> bool:
        return self.kind in ("binary", "ternary")

    @property
    def packable(self) -> bool:
        return self.kind in ("binary", "ternary")

    def __str__(self) -> str:
        return f"quant{self.q}" if self.kind == "quant" else self.kind

    @classmethod
    def parse(cls, text: str) -> "QuantMode":
        text = text.strip()
        if text.startswith("quant"):
            return cls("quant", int(text[len("quant"):]))
        return cls(text)


REAL = QuantMode("real")
BINARY = QuantMode("binary")
TERNARY = QuantMode("ternary")


def sign_pm1(r: np.ndarray) -> np.ndarray:
    """sign with sign(0) = +1."""
    return np.where(r >= 0.0, 1.0, -1.0)


def ste_mask(r: np.ndarray) -> np.ndarray:
    return (np.abs(r) <= 1.0).astype(np.float64)


def ste_backward(grad_b: np.ndarray, r: np.ndarray) -> np.ndarray:
    """grad_r = grad_b masked to |r| <= 1 (boundary passes)."""
    if grad_b.shape != r.shape:
        raise ValueError(f"shape mismatch: grad {grad_b.shape} vs input {r.shape}")
    return grad_b * ste_mask(r)


def binarize(x: Tensor) -> Tensor:
    out = sign_pm1(x.data)
    rd = x.data

    def backward(o: Tensor):
        if x.requires_grad:
            x.accumulate(ste_backward(o.grad, rd))

    return _finish(out, (x,), backward)


def ternary_delta(r: np.ndarray) -> float:
    if r.size == 0:
        raise ValueError("ternarize needs a nonempty tensor")
    return TERNARY_DELTA_FACTOR * float(np.mean(np.abs(r)))


def tern(r: np.ndarray, delta: float) -> np.ndarray:
    return np.where(r > delta, 1.0, np.where(r < -delta, -1.0, 0.0))


def ternarize(x: Tensor) -> Tensor:
    delta = ternary_delta(x.data)
    if delta == 0.0:
        warnings.warn("ternarize: all-zero input gives delta=0, output is all zeros", stacklevel=2)
    out = tern(x.data, delta)
    rd = x.data

    def backward(o: Tensor):
        if x.requires_grad:
            x.accumulate(ste_backward(o.grad, rd))

    return _finish(out, (x,), backward)


def clip_latent(w: Tensor) -> Tensor:
    """Clamp latent real weights to [-1, 1] in place; call after every optimizer step."""
    np.clip(w.data, -1.0, 1.0, out=w.data)
    return w


# ---------------------------------------------------------------------------
# Post-training quantization
# ---------------------------------------------------------------------------

def quant_levels(q: int, scale: float) -> np.ndarray:
    """2^q codebook levels, uniform over [-scale, scale]."""
    return scale * (-1.0 + 2.0 * np.arange(2 ** q) / (2 ** q - 1))


def quantize_codes(w: np.ndarray, q: int) -> tuple[np.ndarray, float]:
    """Map weights to nearest codebook index; ties go to the smaller-magnitude level.

    Returns (codes as uint8 in [0, 2^q), scale = max|w|).
    """
    if q not in POST_QUANT_BITS:
        raise ValueError(f"post-quant bits must be one of {POST_QUANT_BITS}, got {q}")
    if w.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    scale = float(np.max(np.abs(w)))
    if scale == 0.0:
        return np.zeros(w.shape, dtype=np.uint8), 0.0
    levels = 2 ** q
    step = 2.0 * scale / (levels - 1)
    u = (w + scale) / step                      # level index coordinate
    lo = np.floor(u)
    frac = u - lo
    idx = np.where(frac > 0.5, lo + 1.0, lo)
    # exact midpoints: pick the level nearer zero; dead-center goes positive
    tie = frac == 0.5
    center = (levels - 1) / 2.0
    idx = np.where(tie, np.where(lo + 0.5 <= center, lo + 1.0, lo), idx)
    return np.clip(idx, 0, levels - 1).astype(np.uint8), scale


def dequantize_codes(codes: np.ndarray, q: int, scale: float) -> np.ndarray:
    return quant_levels(q, scale)[codes]


def post_quantize(w: np.ndarray, q: int) -> np.ndarray:
    """Round each weight to the per-layer symmetric uniform q-bit codebook."""
    codes, scale = quantize_codes(np.asarray(w, dtype=np.float64), q)
    return dequantize_codes(codes, q, scale)
