#!/usr/bin/env python3
"""Kernel benchmark: compiled extension vs pure numpy fallback, and the
packed xnor-popcount path vs the naive scalar float path.

Run from the repo root after `pip install -e . --no-build-isolation`:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

import bitturbo.bitkernel as bk

SHAPES = [
    ("desk hidden", 16, 16, 5, 100),
    ("desk entry-width", 7, 16, 5, 100),
    ("full-scale hidden", 100, 100, 5, 100),
    ("long block", 16, 16, 5, 4096),
]


def best_of(fn, reps=5, min_time=0.05):
    fn()
    t0 = time.perf_counter()
    fn()
    once = time.perf_counter() - t0
    inner = max(1, int(min_time / max(once, 1e-9)))
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def main():
    print(f"available backends: {bk.available_backends()} (active: {bk.BACKEND})")
    g = np.random.default_rng(0)
    batch = 16
    header = f"{'shape':<20} {'backend':<8} {'packed ms':>10} {'float ms':>10} {'ratio':>7}"
    print(header)
    print("-" * len(header))
    for name, c_in, c_out, k, h in SHAPES:
        a = g.choice([-1.0, 1.0], size=(batch, c_in, h))
        w = g.choice([-1.0, 1.0], size=(c_out, c_in, k))
        bias = g.choice([-1.0, 1.0], size=c_out)
        layer = bk.freeze_conv_layer(
            w, bias, np.ones(c_out), np.zeros(c_out), np.zeros(c_out), np.ones(c_out)
        )
        xw = bk.pack_activations(a)
        for backend in bk.available_backends():
            tp = best_of(lambda: bk.packed_conv1d(xw, h, layer, backend=backend))
            tf = best_of(lambda: bk.float_conv1d_naive(a, w, bias, backend=backend))
            print(
                f"{name:<20} {backend:<8} {tp * 1e3:>10.3f} {tf * 1e3:>10.3f} "
                f"{tf / tp:>6.1f}x"
            )
    print("\nratio = naive float time / packed time on the same backend")
    print("(the word-parallel cycle model caps the packed advantage at 64x)")


if __name__ == "__main__":
    main()
