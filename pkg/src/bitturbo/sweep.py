"""BER/BLER sweep harness.

Each SNR point accumulates Monte Carlo chunks until it has either seen
`blocks_per_point` blocks or collected `target_bit_errors` bit errors
(standard early stopping; the partially measured point is still an
unbiased estimate because the stop decision only looks at completed
chunks).  Message bits and channel noise come from counter-based streams
keyed by (seed, point index, chunk index), so results are independent of
worker scheduling, and points evaluate in parallel threads capped by
``BITTURBO_THREADS``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .channel import ChannelSpec, ErrorStats, awgn, measure
from .codec import CodecModel, PackedDecoder
from .ensemble import EnsembleModel, bag_decode

CHUNK_BLOCKS = 250
CSV_HEADER = "snr_db,ber,bler,bits,blocks"


@dataclass
class PointResult:
    snr_db: float
    stats: ErrorStats

    @property
    def ber(self) -> float:
        return self.stats.ber

    @property
    def bler(self) -> float:
        return self.stats.bler


class ModelEvaluator:
    """Adapts the model kinds to a common encode/decode-hard pair."""

    def __init__(self, model, packed: PackedDecoder | None = None, backend: str | None = None):
        self.packed = packed
        self.backend = backend
        if isinstance(model, EnsembleModel):
            self.ensemble = model
            self.model = model.members[0]
        else:
            self.ensemble = None
            self.model = model

    @property
    def K(self) -> int:
        return self.model.geom.K

    def encode(self, u: np.ndarray) -> np.ndarray:
        return self.model.encode(u, training=False).data

    def decode_hard(self, z: np.ndarray) -> np.ndarray:
        if self.packed is not None:
            return self.packed.decode_hard(z, backend=self.backend)
        if self.ensemble is not None:
            return bag_decode(z, self.ensemble)[1]
        return self.model.decode(z, training=False)[1]


def evaluate_point(
    ev: ModelEvaluator,
    snr_db: float,
    seed: int,
    point_idx: int,
    blocks: int,
    target_bit_errors: int,
) -> PointResult:
    spec = ChannelSpec.from_snr_db(snr_db, seed)
    stats = ErrorStats()
    done = 0
    chunk = 0
    while done < blocks:
        n = min(CHUNK_BLOCKS, blocks - done)
        g = rng.generator(seed, rng.TAG_EVAL_BITS, point_idx, chunk)
        u = (g.integers(0, 2, size=(n, 1, ev.K)) * 2 - 1).astype(np.float64)
        z = awgn(ev.encode(u), spec, point_idx, chunk)
        hard = ev.decode_hard(z)
        stats.add(measure(u.reshape(n, ev.K), hard.reshape(n, ev.K)))
        done += n
        chunk += 1
        if target_bit_errors > 0 and stats.bit_errors >= target_bit_errors:
            break
    return PointResult(snr_db=snr_db, stats=stats)


def worker_count() -> int:
    env = os.environ.get("BITTURBO_THREADS", "")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_sweep(
    ev: ModelEvaluator,
    snr_points: list[float],
    seed: int,
    blocks_per_point: int,
    target_bit_errors: int,
) -> list[PointResult]:
    if blocks_per_point < 1:
        raise ValueError("blocks_per_point must be >= 1")
    workers = min(worker_count(), len(snr_points))
    if workers <= 1:
        return [
            evaluate_point(ev, s, seed, i, blocks_per_point, target_bit_errors)
            for i, s in enumerate(snr_points)
        ]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(evaluate_point, ev, s, seed, i, blocks_per_point, target_bit_errors)
            for i, s in enumerate(snr_points)
        ]
        return [f.result() for f in futures]  # submission order == SNR order


def sweep_csv(results: list[PointResult]) -> str:
    lines = [CSV_HEADER]
    for r in results:
        lines.append(
            f"{r.snr_db:g},{r.ber:.8e},{r.bler:.8e},{r.stats.bits},{r.stats.blocks}"
        )
    return "\n".join(lines) + "\n"
