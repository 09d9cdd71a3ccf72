"""Benchmarks: packed xnor-popcount path vs the naive float path.

The headline number is kernel-level: the packed convolution against the
scalar float convolution on the same decoder layer shapes (that is the
comparison the word-parallel cycle model speaks to; the theoretical
ceiling is 64 one-bit lanes per word op).  Full-decode wall clock for
the frozen decoder vs the float model, and compiled-extension vs pure
numpy backends, are reported alongside.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .bitkernel import BACKEND, available_backends, packed_conv1d, float_conv1d_naive
from .bitkernel.costing import LayerShape, cost_report
from .codec import CodecModel, PackedDecoder


@dataclass
class Timing:
    name: str
    reps: list[float]

    @property
    def best(self) -> float:
        return min(self.reps)

    @property
    def mean(self) -> float:
        return float(np.mean(self.reps))

    @property
    def rel_spread(self) -> float:
        return (max(self.reps) - min(self.reps)) / self.mean if self.mean else 0.0


def _time(fn, reps: int, min_time: float = 0.05) -> Timing:
    fn()  # warm up
    # calibrate an inner loop so one rep is long enough to time stably
    t0 = time.perf_counter()
    fn()
    once = time.perf_counter() - t0
    inner = max(1, int(min_time / max(once, 1e-9)))
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - t0) / inner)
    return Timing(name="", reps=samples)


@dataclass
class KernelBench:
    shape: LayerShape
    packed_s: float
    float_s: float

    @property
    def ratio(self) -> float:
        return self.float_s / self.packed_s


@dataclass
class BenchReport:
    backend: str
    kernels: list[KernelBench]
    packed_total_s: float
    float_total_s: float
    decode_packed_s: float | None = None
    decode_float_s: float | None = None
    backend_compare: dict = field(default_factory=dict)
    spread: float = 0.0

    @property
    def kernel_ratio(self) -> float:
        return self.float_total_s / self.packed_total_s

    def lines(self) -> list[str]:
        out = [f"kernel backend: {self.backend}"]
        for kb in self.kernels:
            s = kb.shape
            out.append(
                f"  layer c{s.c_in}->c{s.c_out} k{s.k} h{s.h_out}: "
                f"packed {kb.packed_s * 1e3:.3f} ms, float {kb.float_s * 1e3:.3f} ms, "
                f"{kb.ratio:.1f}x"
            )
        out.append(
            f"packed vs naive-float kernel speedup: {self.kernel_ratio:.1f}x "
            f"(cycle-model ceiling 64x)"
        )
        out.append(f"timing spread across repetitions: {self.spread * 100:.1f}%")
        if self.decode_packed_s is not None:
            out.append(
                f"full decode: packed {self.decode_packed_s * 1e3:.1f} ms/batch, "
                f"float {self.decode_float_s * 1e3:.1f} ms/batch, "
                f"{self.decode_float_s / self.decode_packed_s:.1f}x"
            )
        for name, t in self.backend_compare.items():
            out.append(f"packed backend {name}: {t * 1e3:.3f} ms/layer-batch")
        return out


def _packed_hidden_layers(packed: PackedDecoder):
    for blk in packed.blocks:
        for layer in blk.hidden:
            yield layer


def bench_kernels(packed: PackedDecoder, batch: int = 16, reps: int = 5,
                  backend: str | None = None) -> BenchReport:
    """Time packed vs naive float conv on the decoder's packed layer shapes."""
    backend = backend or BACKEND
    K = packed.geom.K
    g = rng.generator(0, rng.TAG_BENCH)
    kernels = []
    spread = 0.0
    # distinct shapes only; every hidden layer in a block repeats the same shape
    seen = {}
    counts = {}
    for layer in _packed_hidden_layers(packed):
        key = (layer.c_in, layer.c_out, layer.k)
        counts[key] = counts.get(key, 0) + 1
        seen.setdefault(key, layer)
    packed_total = 0.0
    float_total = 0.0
    compare = {}
    for key, layer in seen.items():
        c_in, c_out, k = key
        a = (g.integers(0, 2, size=(batch, c_in, K)) * 2 - 1).astype(np.float64)
        from .bitkernel import pack_activations
        xw = pack_activations(a)
        w = layer.weights_ternary()
        bias = layer.bias_code.astype(np.float64)
        tp = _time(lambda: packed_conv1d(xw, K, layer, backend=backend), reps)
        tf = _time(lambda: float_conv1d_naive(a, w, bias, backend=backend), reps)
        spread = max(spread, tp.rel_spread, tf.rel_spread)
        kernels.append(KernelBench(LayerShape(c_in, c_out, k, K), tp.best, tf.best))
        packed_total += tp.best * counts[key]
        float_total += tf.best * counts[key]
        for other in available_backends():
            if other != backend:
                t_other = _time(lambda: packed_conv1d(xw, K, layer, backend=other), max(2, reps // 2))
                compare[other] = compare.get(other, 0.0) + t_other.best * counts[key]
    return BenchReport(
        backend=backend,
        kernels=kernels,
        packed_total_s=packed_total,
        float_total_s=float_total,
        backend_compare=compare,
        spread=spread,
    )


def bench_decode(model: CodecModel, packed: PackedDecoder, batch: int = 32,
                 reps: int = 3, backend: str | None = None) -> tuple[float, float]:
    """Wall-clock full decode: packed path vs the float model path."""
    g = rng.generator(1, rng.TAG_BENCH)
    z = g.normal(0.0, 1.0, size=(batch, 3, model.geom.K))
    tp = _time(lambda: packed.decode_hard(z, backend=backend), reps)
    tf = _time(lambda: model.decode(z, training=False), reps)
    return tp.best, tf.best


def flops_line(model: CodecModel) -> str:
    rep = cost_report(model.decoder_cost_layers(), model.mode)
    return f"decoder float path: {rep.flops_real:.4g} FLOPs, {rep.bitops:.4g} bit ops"
