"""Minimal reverse-mode autodiff over dense float64 tensors.

Just enough machinery to train 1D-CNN encoder/decoder stacks: a Tensor
wrapper around a numpy array, an explicit Tape recording backward
closures in forward order, and the operations the codec needs
(same-padding conv1d, batchnorm, ELU/sigmoid, BCE, concat, position
gather).  Quantization ops with straight-through gradients register on
the same tape from :mod:`bitturbo.quantize`.

Conventions:
  * conv data is (batch, channels, length); conv weights are
    (c_out, c_in, k) and convolution is cross-correlation with
    same-length zero padding.
  * everything is float64; any non-finite op output raises.
  * gradients accumulate into ``Tensor.grad``; a tensor with
    ``requires_grad=False`` lets gradients flow through it without
    accumulating (used to freeze one side during alternating training).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    """An op produced NaN/Inf."""


class TapeError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of forward ops; backward replays it once, reversed."""

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, backward_fn) -> None:
        self._nodes.append(backward_fn)

    def backward(self, loss: "Tensor") -> None:
        if self._consumed:
            raise TapeError("backward already ran on this tape; build a fresh tape")
        if not self._nodes:
            raise TapeError("backward called with no recorded forward ops")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._nodes):
            fn()


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _finish(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result: finiteness check, tape registration."""
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError("op produced non-finite values")
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(lambda: None if out.grad is None else backward_fn(out))
    return out


# ---------------------------------------------------------------------------
# Layer spec
# ---------------------------------------------------------------------------

ACTIVATIONS = ("linear", "elu", "sign-binary", "sigmoid")


@dataclass(frozen=True)
class ConvLayerSpec:
    """Shape contract of one same-padding 1D conv layer."""

    c_in: int
    c_out: int
    k: int
    has_bias: bool = True
    activation: str = "elu"
    padding: int = field(init=False)

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ShapeError(f"kernel width must be odd and >= 1, got {self.k}")
        if self.c_in < 1 or self.c_out < 1:
            raise ShapeError("channel counts must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "padding", (self.k - 1) // 2)


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------

def _patches(xd: np.ndarray, k: int, pad: int) -> np.ndarray:
    """im2col: (b, c, h) -> contiguous (b*h, c*k) patch matrix."""
    b, c, h = xd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # (b, c, h, k)
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * h, c * k)


def conv1d_forward(
    xd: np.ndarray, wd: np.ndarray, bd: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw same-padding conv; shared by the tape op and the frozen decoder
    so both paths produce bitwise-identical float results.

    Returns (out (b, c_out, h), patch matrix, weight matrix).
    """
    b, c_in, h = xd.shape
    c_out, _, k = wd.shape
    pad = (k - 1) // 2
    pat = _patches(xd, k, pad)
    wmat = wd.reshape(c_out, c_in * k)
    out = pat @ wmat.T
    if bd is not None:
        out += bd
    return out.reshape(b, h, c_out).transpose(0, 2, 1), pat, wmat


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padding cross-correlation; output length equals input length."""
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(f"conv1d expects x (b,c,h) and w (co,ci,k), got {x.shape} and {w.shape}")
    b, c_in, h = x.data.shape
    c_out, c_in_w, k = w.data.shape
    if c_in != c_in_w:
        raise ShapeError(f"conv1d channel mismatch: x has {c_in}, w expects {c_in_w}")
    if k % 2 == 0:
        raise ShapeError("conv1d kernel width must be odd")
    if bias is not None and bias.data.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.data.shape} != ({c_out},)")
    pad = (k - 1) // 2

    out, pat, wmat = conv1d_forward(x.data, w.data, None if bias is None else bias.data)

    inputs = (x, w) if bias is None else (x, w, bias)

    def backward(o: Tensor):
        g = o.grad.transpose(0, 2, 1).reshape(b * h, c_out)  # (b*h, co)
        if w.requires_grad:
            w.accumulate((g.T @ pat).reshape(c_out, c_in, k))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=0))
        if x.requires_grad:
            cols = (g @ wmat).reshape(b, h, c_in, k).transpose(0, 2, 1, 3)  # (b, ci, h, k)
            gxp = np.zeros((b, c_in, h + 2 * pad))
            for j in range(k):
                gxp[:, :, j:j + h] += cols[:, :, :, j]
            x.accumulate(gxp[:, :, pad:pad + h])

    return _finish(out, inputs, backward)


def elu(x: Tensor) -> Tensor:
    xd = x.data
    neg = np.expm1(np.minimum(xd, 0.0))
    out = np.where(xd > 0.0, xd, neg)

    def backward(o: Tensor):
        if x.requires_grad:
            x.accumulate(o.grad * np.where(xd > 0.0, 1.0, neg + 1.0))

    return _finish(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    # branch on sign so exp never overflows
    xd = x.data
    pos = xd >= 0
    out = np.empty_like(xd)
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(o: Tensor):
        if x.requires_grad:
            x.accumulate(o.grad * out * (1.0 - out))

    return _finish(out, (x,), backward)


@dataclass
class RunningStats:
    """Inference-time normalization statistics (batchnorm / power norm)."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def for_channels(cls, c: int, momentum: float = 0.1) -> "RunningStats":
        return cls(mean=np.zeros(c), var=np.ones(c), momentum=momentum)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        m = self.momentum
        self.mean = (1.0 - m) * self.mean + m * batch_mean
        self.var = (1.0 - m) * self.var + m * batch_var


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
    training: bool,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel standardization over (batch, length), then affine."""
    if x.data.ndim != 3:
        raise ShapeError(f"batchnorm1d expects (b,c,h), got {x.shape}")
    b, c, h = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError("gamma/beta must have one entry per channel")
    n = b * h
    if training:
        if n < 2:
            raise ShapeError("batchnorm in training mode needs batch*length >= 2")
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        running.update(mu, var)
    else:
        mu, var = running.mean, running.var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None]) * inv_std[None, :, None]
    out = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def backward(o: Tensor):
        g = o.grad
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=(0, 2)))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gx = g * gamma.data[None, :, None]
            if training:
                # Standard batchnorm backward through the batch statistics.
                sum_gx = gx.sum(axis=(0, 2))
                sum_gx_xhat = (gx * xhat).sum(axis=(0, 2))
                dx = (gx - (sum_gx[None, :, None] + xhat * sum_gx_xhat[None, :, None]) / n)
                x.accumulate(dx * inv_std[None, :, None])
            else:
                x.accumulate(gx * inv_std[None, :, None])

    return _finish(out, (x, gamma, beta), backward)


def standardize(x: Tensor, running: RunningStats, training: bool, eps: float = 1e-12) -> Tensor:
    """Batchnorm without the affine part (codeword power constraint).

    eps only guards a fully collapsed stream; it is far below batchnorm's
    floor so the normalized stream is unit-variance to ~1e-12.
    """
    frozen = Tensor(np.ones(x.data.shape[1]))
    return batchnorm1d(x, frozen, Tensor(np.zeros(x.data.shape[1])), running, training, eps)


BCE_EPS = 1e-7


def bce_loss(p: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy; p clamped to [eps, 1-eps], targets in {0,1}."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != p.data.shape:
        raise ShapeError(f"target shape {t.shape} != prediction shape {p.data.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("bce_loss targets must be 0 or 1")
    pc = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    n = pc.size
    out = np.asarray(-(t * np.log(pc) + (1.0 - t) * np.log1p(-pc)).sum() / n)

    def backward(o: Tensor):
        if p.requires_grad:
            inside = (p.data >= BCE_EPS) & (p.data <= 1.0 - BCE_EPS)
            dp = (-(t / pc) + (1.0 - t) / (1.0 - pc)) / n
            p.accumulate(o.grad * dp * inside)

    return _finish(out, (p,), backward)


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Concatenate (b, c_i, h) tensors along the channel axis."""
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    out = np.concatenate([t.data for t in parts], axis=1)
    sizes = [t.data.shape[1] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(o: Tensor):
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.accumulate(o.grad[:, lo:hi, :])

    return _finish(out, tuple(parts), backward)


def take_positions(x: Tensor, perm: np.ndarray) -> Tensor:
    """Gather along the length axis: out[..., i] = x[..., perm[i]]."""
    if x.data.shape[-1] != perm.shape[0]:
        raise ShapeError(f"permutation length {perm.shape[0]} != block length {x.data.shape[-1]}")
    out = x.data[..., perm]

    def backward(o: Tensor):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            g[..., perm] = o.grad
            x.accumulate(g)

    return _finish(out, (x,), backward)


def tsum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def backward(o: Tensor):
        if x.requires_grad:
            x.accumulate(np.full_like(x.data, float(o.grad)))

    return _finish(out, (x,), backward)


def tmean(x: Tensor) -> Tensor:
    out = np.asarray(x.data.mean())

    def backward(o: Tensor):
        if x.requires_grad:
            x.accumulate(np.full_like(x.data, float(o.grad) / x.data.size))

    return _finish(out, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def backward(o: Tensor):
        if a.requires_grad:
            a.accumulate(o.grad)
        if b.requires_grad:
            b.accumulate(o.grad)

    return _finish(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = a.data * b.data

    def backward(o: Tensor):
        if a.requires_grad:
            a.accumulate(o.grad * b.data)
        if b.requires_grad:
            b.accumulate(o.grad * a.data)

    return _finish(out, (a, b), backward)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self, params: list[Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(
    params: list[Tensor],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place."""
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
