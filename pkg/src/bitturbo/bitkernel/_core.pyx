# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: xnor-popcount packed convolution and the naive
scalar float convolution it is benchmarked against.

Data layout matches bitplane.py: LSB-first bits, little-endian words.
Activations arrive as one bit row per input channel; weight planes hold
one bit row per output channel over the c_in*k taps in kernel-position-
major order (tap index j*c_in + ci).

Kernel structure per sample: transpose activation rows into per-position
column words, gather every position's tap vector once, then run output
channels outermost so each channel's weight words stay in registers and
output bits accumulate in a local word.  Positions whose receptive field
overlaps the zero padding (at most k-1 of them) are recomputed in a
patch pass with a tap validity mask, so a pad contributes 0 to the
integer pre-activation, never -1.
"""

from libc.stdlib cimport calloc, free
from libc.string cimport memset
from libc.stdint cimport uint64_t, int64_t

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef extern from *:
    """
    #if defined(_MSC_VER)
    #include <intrin.h>
    static inline int popcount64(unsigned long long x) { return (int)__popcnt64(x); }
    #else
    static inline int popcount64(unsigned long long x) { return __builtin_popcountll(x); }
    #endif
    """
    int popcount64(unsigned long long x) nogil


cdef inline void _insert(uint64_t* buf, int t0, int nbits, uint64_t v) noexcept nogil:
    # OR an nbits-wide value (nbits <= 64) into the bit vector at offset t0.
    cdef int wi = t0 >> 6
    cdef int off = t0 & 63
    buf[wi] |= v << off
    if off + nbits > 64:
        buf[wi + 1] |= v >> (64 - off)


cdef void _transpose_bits(const uint64_t* x, int c_in, int words_h, int h,
                          int col_words, uint64_t* cols) noexcept nogil:
    # row-per-channel planes -> one column word group per position
    cdef int ci, p
    cdef uint64_t bit
    cdef const uint64_t* row
    memset(cols, 0, <size_t>col_words * h * sizeof(uint64_t))
    for ci in range(c_in):
        row = x + ci * words_h
        for p in range(h):
            bit = (row[p >> 6] >> (p & 63)) & 1
            cols[p * col_words + (ci >> 6)] |= bit << (ci & 63)


cdef void _gather_all(const uint64_t* cols, int col_words, int c_in, int h,
                      int k, int pad, int n_words, uint64_t* taps_all) noexcept nogil:
    # tap vector for every output position; out-of-range taps stay 0
    cdef int p, j, cg, pos, seg
    cdef const uint64_t* col
    cdef uint64_t* taps
    memset(taps_all, 0, <size_t>h * n_words * sizeof(uint64_t))
    for p in range(h):
        taps = taps_all + p * n_words
        for j in range(k):
            pos = p - pad + j
            if 0 <= pos < h:
                col = cols + pos * col_words
                for cg in range(col_words):
                    seg = c_in - (cg << 6)
                    if seg > 64:
                        seg = 64
                    _insert(taps, j * c_in + (cg << 6), seg, col[cg])


cdef void _edge_valid(int c_in, int h, int p, int k, int pad,
                      int n_words, uint64_t* valid) noexcept nogil:
    # validity over taps for a position near the block edge
    cdef int j, pos, seg, t
    cdef uint64_t seg_ones
    memset(valid, 0, n_words * sizeof(uint64_t))
    for j in range(k):
        pos = p - pad + j
        if 0 <= pos < h:
            seg = c_in
            t = j * c_in
            while seg > 0:
                seg_ones = <uint64_t>0xFFFFFFFFFFFFFFFF if seg >= 64 else ((<uint64_t>1 << seg) - 1)
                _insert(valid, t, seg if seg < 64 else 64, seg_ones)
                t += 64
                seg -= 64


def packed_conv(x_obj, int h, ws_obj, wm_obj, bias_obj, thr_obj, int k):
    """Packed 1D conv over a batch of bit-plane activations.

    x: uint64 (b, c_in, words_h); weight sign/mask: uint64 (c_out, n_words)
    in kernel-position-major tap order; bias: int64 (c_out,).  With thr
    (int64 per channel) the result is the sign activation as packed bits
    (b, c_out, words_h); with thr=None the raw integer pre-activations
    (b, c_out, h) are returned.
    """
    cdef cnp.ndarray[cnp.uint64_t, ndim=3, mode="c"] x = np.ascontiguousarray(x_obj, dtype=np.uint64)
    cdef cnp.ndarray[cnp.uint64_t, ndim=2, mode="c"] ws = np.ascontiguousarray(ws_obj, dtype=np.uint64)
    cdef cnp.ndarray[cnp.uint64_t, ndim=2, mode="c"] wm = np.ascontiguousarray(wm_obj, dtype=np.uint64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] bias = np.ascontiguousarray(bias_obj, dtype=np.int64)
    cdef bint thresholded = thr_obj is not None
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] thr
    if thresholded:
        thr = np.ascontiguousarray(thr_obj, dtype=np.int64)
    else:
        thr = np.zeros(ws.shape[0], dtype=np.int64)

    cdef int b = x.shape[0], c_in = x.shape[1], words_h = x.shape[2]
    cdef int c_out = ws.shape[0], n_words = ws.shape[1]
    cdef int n_taps = c_in * k
    cdef int pad = (k - 1) >> 1
    cdef int col_words = (c_in + 63) >> 6
    if k < 1 or k > 63 or k % 2 == 0:
        raise ValueError("kernel width must be odd and in [1, 63]")
    if n_words != (n_taps + 63) >> 6:
        raise ValueError("weight plane width does not match c_in*k taps")
    if words_h != (h + 63) >> 6:
        raise ValueError("activation plane width does not match h")
    if bias.shape[0] != c_out or thr.shape[0] != c_out:
        raise ValueError("bias/threshold arrays must have one entry per output channel")

    cdef cnp.ndarray[cnp.uint64_t, ndim=3, mode="c"] out_bits
    cdef cnp.ndarray[cnp.int64_t, ndim=3, mode="c"] out_counts
    if thresholded:
        out_bits = np.zeros((b, c_out, words_h), dtype=np.uint64)
        out_counts = np.zeros((1, 1, 1), dtype=np.int64)
    else:
        out_counts = np.zeros((b, c_out, h), dtype=np.int64)
        out_bits = np.zeros((1, 1, 1), dtype=np.uint64)

    cdef uint64_t* cols = <uint64_t*>calloc(<size_t>col_words * h, sizeof(uint64_t))
    cdef uint64_t* taps_all = <uint64_t*>calloc(<size_t>h * n_words, sizeof(uint64_t))
    cdef uint64_t* valid = <uint64_t*>calloc(n_words, sizeof(uint64_t))
    cdef int64_t* base_full = <int64_t*>calloc(c_out, sizeof(int64_t))
    if cols == NULL or taps_all == NULL or valid == NULL or base_full == NULL:
        free(cols); free(taps_all); free(valid); free(base_full)
        raise MemoryError()

    cdef int s, p, co, t, lo, hi
    cdef int64_t acc, base, pre, amax
    cdef uint64_t outw, m, w0, w1, m0, m1, pbit
    cdef const uint64_t* tp
    cdef const uint64_t* wsp
    cdef const uint64_t* wmp
    with nogil:
        # interior positions see every tap; their mask popcount is constant
        for co in range(c_out):
            base = 0
            for t in range(n_words):
                base += popcount64(wm[co, t])
            base_full[co] = base
        lo = pad
        hi = h - 1 - pad
        for s in range(b):
            _transpose_bits(&x[s, 0, 0], c_in, words_h, h, col_words, cols)
            _gather_all(cols, col_words, c_in, h, k, pad, n_words, taps_all)
            # main pass assumes every tap is valid; edge positions fixed below
            for co in range(c_out):
                wsp = &ws[co, 0]
                wmp = &wm[co, 0]
                if thresholded:
                    # pre >= thr  <=>  2*disagreements <= base + bias - thr
                    amax = base_full[co] + bias[co] - thr[co]
                    outw = 0
                    tp = taps_all
                    if n_words == 1:
                        w0 = wsp[0]; m0 = wmp[0]
                        for p in range(h):
                            acc = popcount64((tp[0] ^ w0) & m0)
                            tp += 1
                            if 2 * acc <= amax:
                                outw |= <uint64_t>1 << (p & 63)
                            if (p & 63) == 63:
                                out_bits[s, co, p >> 6] = outw
                                outw = 0
                    elif n_words == 2:
                        w0 = wsp[0]; w1 = wsp[1]; m0 = wmp[0]; m1 = wmp[1]
                        for p in range(h):
                            acc = popcount64((tp[0] ^ w0) & m0) + popcount64((tp[1] ^ w1) & m1)
                            tp += 2
                            if 2 * acc <= amax:
                                outw |= <uint64_t>1 << (p & 63)
                            if (p & 63) == 63:
                                out_bits[s, co, p >> 6] = outw
                                outw = 0
                    else:
                        for p in range(h):
                            acc = 0
                            for t in range(n_words):
                                acc += popcount64((tp[t] ^ wsp[t]) & wmp[t])
                            tp += n_words
                            if 2 * acc <= amax:
                                outw |= <uint64_t>1 << (p & 63)
                            if (p & 63) == 63:
                                out_bits[s, co, p >> 6] = outw
                                outw = 0
                    if h & 63:
                        out_bits[s, co, words_h - 1] = outw
                else:
                    tp = taps_all
                    for p in range(h):
                        acc = 0
                        for t in range(n_words):
                            acc += popcount64((tp[t] ^ wsp[t]) & wmp[t])
                        tp += n_words
                        out_counts[s, co, p] = base_full[co] - 2 * acc + bias[co]
            # patch pass: positions whose window overlaps the padding
            for p in range(h):
                if lo <= p <= hi:
                    continue
                _edge_valid(c_in, h, p, k, pad, n_words, valid)
                tp = taps_all + p * n_words
                for co in range(c_out):
                    wsp = &ws[co, 0]
                    wmp = &wm[co, 0]
                    acc = 0
                    base = 0
                    for t in range(n_words):
                        m = wmp[t] & valid[t]
                        acc += popcount64((tp[t] ^ wsp[t]) & m)
                        base += popcount64(m)
                    pre = base - 2 * acc + bias[co]
                    if thresholded:
                        pbit = <uint64_t>1 << (p & 63)
                        if pre >= thr[co]:
                            out_bits[s, co, p >> 6] |= pbit
                        else:
                            out_bits[s, co, p >> 6] &= ~pbit
                    else:
                        out_counts[s, co, p] = pre

    free(cols); free(taps_all); free(valid); free(base_full)
    return np.asarray(out_bits) if thresholded else np.asarray(out_counts)


def float_conv1d_naive(x_obj, w_obj, bias_obj):
    """Reference scalar float path: one multiply-accumulate per tap.

    Same-length zero padding; x (b, c_in, h), w (c_out, c_in, k).
    Deliberately unblocked: this is the 64-bit float baseline the packed
    kernel's speedup is measured against.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] x = np.ascontiguousarray(x_obj, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] w = np.ascontiguousarray(w_obj, dtype=np.float64)
    cdef bint has_bias = bias_obj is not None
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] bias
    if has_bias:
        bias = np.ascontiguousarray(bias_obj, dtype=np.float64)
    else:
        bias = np.zeros(w.shape[0], dtype=np.float64)

    cdef int b = x.shape[0], c_in = x.shape[1], h = x.shape[2]
    cdef int c_out = w.shape[0], k = w.shape[2]
    cdef int pad = (k - 1) >> 1
    if w.shape[1] != c_in:
        raise ValueError("channel mismatch between x and w")

    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] out = np.empty((b, c_out, h), dtype=np.float64)
    cdef int s, co, ci, j, p, pos, start, lo, hi
    cdef double acc
    with nogil:
        lo = pad
        hi = h - 1 - pad
        for s in range(b):
            for co in range(c_out):
                for p in range(h):
                    acc = bias[co]
                    start = p - pad
                    if lo <= p <= hi:
                        for ci in range(c_in):
                            for j in range(k):
                                acc = acc + w[co, ci, j] * x[s, ci, start + j]
                    else:
                        for ci in range(c_in):
                            for j in range(k):
                                pos = start + j
                                if 0 <= pos < h:
                                    acc = acc + w[co, ci, j] * x[s, ci, pos]
                    out[s, co, p] = acc
    return np.asarray(out)
