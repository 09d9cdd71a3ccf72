"""Pure numpy kernels, import-time fallback for the compiled extension.

Same contracts and bit-exact results as ``_core``; the packed path here
unpacks to small integers and uses integer matmuls instead of word-level
xnor-popcount, so it trades the compiled kernel's speed for portability.
"""

from __future__ import annotations

import numpy as np

from .bitplane import pack_rows, unpack_rows


def _weights_from_planes(ws: np.ndarray, wm: np.ndarray, c_in: int, k: int) -> np.ndarray:
    """(c_out, n_words) sign/mask planes -> int64 (c_out, c_in, k) in {-1,0,1}.

    Planes store taps kernel-position-major (tap index j*c_in + ci).
    """
    c_out = ws.shape[0]
    sign = unpack_rows(ws, c_in * k).astype(np.int64) * 2 - 1
    mask = unpack_rows(wm, c_in * k).astype(np.int64)
    return (sign * mask).reshape(c_out, k, c_in).transpose(0, 2, 1)


def _int_conv(x_pm1: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Exact integer same-padding conv; x in {-1,0,1} with 0 pads."""
    b, c_in, h = x_pm1.shape
    c_out, _, k = w.shape
    pad = (k - 1) // 2
    xp = np.pad(x_pm1, ((0, 0), (0, 0), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # (b, ci, h, k)
    pat = win.transpose(0, 2, 1, 3).reshape(b * h, c_in * k)
    out = pat @ w.reshape(c_out, c_in * k).T.astype(np.int64)
    out += bias.astype(np.int64)
    return out.reshape(b, h, c_out).transpose(0, 2, 1)


def packed_conv(x, h, ws, wm, bias, thr, k):
    """See _core.packed_conv; semantics are identical."""
    x = np.asarray(x, dtype=np.uint64)
    b, c_in, words_h = x.shape
    if words_h != (h + 63) >> 6:
        raise ValueError("activation plane width does not match h")
    if ws.shape[1] != (c_in * k + 63) >> 6:
        raise ValueError("weight plane width does not match c_in*k taps")
    a = unpack_rows(x, h).astype(np.int64) * 2 - 1          # (b, ci, h)
    w = _weights_from_planes(np.asarray(ws), np.asarray(wm), c_in, k)
    pre = _int_conv(a, w, np.asarray(bias, dtype=np.int64))
    if thr is None:
        return pre
    bits = pre >= np.asarray(thr, dtype=np.int64)[None, :, None]
    return pack_rows(bits.astype(np.uint64))


def float_conv1d_naive(x, w, bias):
    """Tap-loop float conv with zero padding (vectorized over batch/positions)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b, c_in, h = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    out = np.zeros((b, c_out, h))
    for ci in range(c_in):
        for j in range(k):
            out += w[None, :, ci, j, None] * xp[:, None, ci, j:j + h]
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None]
    return out
