"""Bagging of independently trained weak decoders.

One shared encoder (trained in real mode) serves B decoders trained
with distinct seeds; the bag's soft estimate is the arithmetic mean of
the members' sigmoid outputs.  The member axis is sorted elementwise
before summing so the aggregate is bitwise invariant to member order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import CodecModel
from .config import ExperimentConfig
from .quantize import QuantMode
from .train import train_decoder_only, train_full

MEMBER_SEED_STRIDE = 1000003


@dataclass
class EnsembleModel:
    members: list[CodecModel]

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        first = self.members[0]
        for m in self.members[1:]:
            if m.geom != first.geom or str(m.mode) != str(first.mode):
                raise ValueError("ensemble members must share geometry and mode")
            if not np.array_equal(m.interleaver.perm, first.interleaver.perm):
                raise ValueError("ensemble members must share the interleaver")

    @property
    def B(self) -> int:
        return len(self.members)

    @property
    def geom(self):
        return self.members[0].geom

    def encode(self, u, training: bool = False):
        return self.members[0].encode(u, training)


def bag_decode(z: np.ndarray, ens: EnsembleModel) -> tuple[np.ndarray, np.ndarray]:
    """Average the members' soft bit estimates; threshold at 0.5, ties +1."""
    softs = np.stack([m.decode(z, training=False)[0].data for m in ens.members])
    softs.sort(axis=0)  # canonical summation order: member order cannot matter
    # mean as base + mean(offsets): exact when members coincide (B copies of
    # one decoder reproduce that decoder bit for bit)
    base = softs[0]
    soft = base + (softs[1:] - base).sum(axis=0) / ens.B
    hard = np.where(soft >= 0.5, 1.0, -1.0)
    return soft, hard


def _tag_curve_rows(curve: str, tag: str) -> list[str]:
    rows = curve.strip().splitlines()[1:]  # drop the per-run header
    out = []
    for row in rows:
        epoch, phase, rest = row.split(",", 2)
        out.append(f"{epoch},{tag}-{phase},{rest}")
    return out


def train_bag(exp: ExperimentConfig, mode: QuantMode, B: int) -> tuple[EnsembleModel, str]:
    """Shared real-mode encoder first, then B decoders with distinct seeds."""
    if B < 1:
        raise ValueError("bag size must be >= 1")
    base, base_curve = train_full(exp, QuantMode("real"), exp.seed)
    curve_rows = [base_curve.strip().splitlines()[0]]
    curve_rows += _tag_curve_rows(base_curve, "shared")
    members = []
    for b_idx in range(B):
        member_seed = exp.seed + MEMBER_SEED_STRIDE * (b_idx + 1)
        member = CodecModel(base.geom, mode, member_seed)
        member.interleaver = base.interleaver
        for dst, src in zip(member.parameters("encoder"), base.parameters("encoder")):
            dst.data[...] = src.data
        for dst_l, src_l in zip(member.encoder_layers(), base.encoder_layers()):
            if dst_l.has_bn:
                dst_l.running.mean = src_l.running.mean.copy()
                dst_l.running.var = src_l.running.var.copy()
        for dst_s, src_s in zip(member.power, base.power):
            dst_s.mean = src_s.mean.copy()
            dst_s.var = src_s.var.copy()
        _, curve = train_decoder_only(member, exp, member_seed)
        curve_rows += _tag_curve_rows(curve, f"member{b_idx}")
        members.append(member)
    return EnsembleModel(members), "\n".join(curve_rows) + "\n"
