"""AWGN channel simulation and error-rate bookkeeping.

SNR convention: snr_db = -10*log10(sigma^2), i.e. unit signal power per
stream (the encoder's power constraint guarantees that).  Noise comes
from the package's counter-based streams, so a sweep point's channel
realization depends only on (seed, point index, chunk index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng


def sigma_for_snr_db(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 20.0)


def snr_db_for_sigma(sigma: float) -> float:
    return -10.0 * np.log10(sigma * sigma)


@dataclass(frozen=True)
class ChannelSpec:
    snr_db: float
    sigma: float
    seed: int

    @classmethod
    def from_snr_db(cls, snr_db: float, seed: int) -> "ChannelSpec":
        return cls(snr_db=snr_db, sigma=sigma_for_snr_db(snr_db), seed=seed)

    def __post_init__(self):
        if abs(self.sigma ** 2 - 10.0 ** (-self.snr_db / 10.0)) > 1e-12 * max(1.0, self.sigma ** 2):
            raise ValueError("inconsistent snr_db/sigma pair")


def awgn(x: np.ndarray, spec: ChannelSpec, *stream_indices: int) -> np.ndarray:
    """z = x + sigma * n with n i.i.d. standard normal.

    stream_indices picks the noise stream (e.g. sweep point, chunk), so
    parallel workers never share or overlap noise.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("channel input must be finite")
    n = rng.standard_normals(spec.seed, rng.TAG_EVAL_NOISE, *stream_indices, n=x.size)
    return x + spec.sigma * n.reshape(x.shape)


@dataclass
class ErrorStats:
    bit_errors: int = 0
    bits: int = 0
    block_errors: int = 0
    blocks: int = 0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits if self.bits else 0.0

    @property
    def bler(self) -> float:
        return self.block_errors / self.blocks if self.blocks else 0.0

    def add(self, other: "ErrorStats") -> None:
        self.bit_errors += other.bit_errors
        self.bits += other.bits
        self.block_errors += other.block_errors
        self.blocks += other.blocks


def measure(u: np.ndarray, u_hat: np.ndarray) -> ErrorStats:
    """Count bit and block errors between +-1 blocks of shape (blocks, K)."""
    u = np.asarray(u)
    u_hat = np.asarray(u_hat)
    if u.shape != u_hat.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {u_hat.shape}")
    u = u.reshape(u.shape[0], -1)
    u_hat = u_hat.reshape(u_hat.shape[0], -1)
    wrong = u != u_hat
    return ErrorStats(
        bit_errors=int(wrong.sum()),
        bits=int(wrong.size),
        block_errors=int(wrong.any(axis=1).sum()),
        blocks=int(wrong.shape[0]),
    )
