"""Deployment cost arithmetic: parameters, storage, FLOPs vs bit-ops.

Conventions (applied uniformly; cmd cost and the benchmark both read
from here):
  * flops count a multiply-accumulate as 2 ops per tap, i.e. a conv
    layer costs 2 * c_in * k * h_out * c_out.  The exact add count per
    output is c_in*k - 1; the difference is below 1% for these shapes
    and the 2-ops-per-tap convention is what the savings table uses.
  * a bit-mode layer costs c_in * k * h_out * c_out xnor-count ops.
  * storage counts weights and biases only (normalization statistics
    are folded into thresholds at deployment): 64 bits per parameter in
    real mode, q bits post-quantized, 1 bit binary/ternary (ternary
    zeros are dropped at deployment, so its footprint matches binary).
  * speedup follows the word-parallel cycle model: 64 one-bit ops per
    cycle vs one multiply-accumulate pair per cycle.
  * a bag of B members multiplies storage and compute by B; members run
    in parallel, so the per-member speedup is reported.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..quantize import QuantMode

WORD_BITS = 64


@dataclass(frozen=True)
class LayerShape:
    c_in: int
    c_out: int
    k: int
    h_out: int
    has_bias: bool = True

    @property
    def weight_params(self) -> int:
        return self.c_out * self.c_in * self.k

    @property
    def params(self) -> int:
        return self.weight_params + (self.c_out if self.has_bias else 0)

    @property
    def macs(self) -> int:
        return self.c_in * self.k * self.h_out * self.c_out


@dataclass(frozen=True)
class CostReport:
    mode: str
    bag_size: int
    params: int
    storage_bits: int
    flops_real: int
    bitops: int
    memory_saving_x: float
    speedup_x: float

    @property
    def storage_mb(self) -> float:
        return self.storage_bits / 8 / 1e6

    def lines(self) -> list[str]:
        ops = (
            f"{self.bitops:.4g} xnor-count ops"
            if self.speedup_x > 1
            else f"{self.flops_real:.4g} FLOPs"
        )
        return [
            f"mode:            {self.mode}" + (f"  (bag of {self.bag_size})" if self.bag_size > 1 else ""),
            f"parameters:      {self.params}",
            f"storage:         {self.storage_bits} bits = {self.storage_mb:.4g} MB",
            f"compute:         {ops}",
            f"float FLOPs:     {self.flops_real:.4g}",
            f"memory saving:   {self.memory_saving_x:.3g}x",
            f"speedup:         {self.speedup_x:.3g}x",
        ]


def bits_per_param(mode: QuantMode) -> int:
    if mode.kind == "real":
        return WORD_BITS
    if mode.kind == "quant":
        return mode.q
    return 1


def cost_report(layers: list[LayerShape], mode: QuantMode, bag_size: int = 1) -> CostReport:
    if bag_size < 1:
        raise ValueError("bag_size must be >= 1")
    params = sum(l.params for l in layers)
    macs = sum(l.macs for l in layers)
    flops_real = 2 * macs
    storage = params * bits_per_param(mode) * bag_size
    bit_mode = mode.binary_activations
    bitops = macs * bag_size if bit_mode else 0
    return CostReport(
        mode=str(mode),
        bag_size=bag_size,
        params=params,
        storage_bits=storage,
        flops_real=flops_real,
        bitops=bitops,
        memory_saving_x=WORD_BITS * params / storage if storage else 1.0,
        speedup_x=float(WORD_BITS) if bit_mode else 1.0,
    )
