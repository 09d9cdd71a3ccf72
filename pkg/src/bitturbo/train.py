"""Training: alternating encoder/decoder phases, Adam, plateau decay.

Each epoch runs a round of encoder steps (gradients applied to encoder
parameters only) followed by decoder steps (decoder parameters only,
with the codeword detached so nothing flows back to the encoder).  The
frozen side keeps requires_grad False, so its gradients are exactly
zero.  Quantized decoder latents are clipped to [-1, 1] after every
optimizer step.

Every random draw is keyed by (seed, phase, epoch, step), so a training
run is a pure function of (config, mode, seed).

SNR policy: encoder steps train at a fixed SNR; decoder steps draw a
uniform SNR per step from a configured range, which avoids overfitting
the decoder to a single operating point.  Validation is a fixed set of
held-out batches at the encoder SNR, scored in inference mode; its BCE
drives the plateau learning-rate schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .channel import sigma_for_snr_db
from .codec import CodecModel, ModelGeometry
from .config import ExperimentConfig
from .quantize import QuantMode
from .tensor import AdamState, Tape, Tensor, add, adam_step, bce_loss

_PHASE_ID = {"encoder": 0, "decoder": 1}


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 500
    epochs: int = 800
    lr0: float = 1e-4
    plateau_patience: int = 50
    plateau_factor: float = 0.1
    plateau_min_delta: float = 1e-4
    enc_steps: int = 100
    dec_steps: int = 500
    val_batches: int = 10
    enc_train_snr_db: float = 1.0
    dec_train_snr_lo_db: float = -1.5
    dec_train_snr_hi_db: float = 2.0
    seed: int = 0

    @classmethod
    def from_experiment(cls, cfg: ExperimentConfig) -> "TrainConfig":
        return cls(
            batch_size=cfg.batch_size,
            epochs=cfg.epochs,
            lr0=cfg.lr0,
            plateau_patience=cfg.plateau_patience,
            plateau_factor=cfg.plateau_factor,
            plateau_min_delta=cfg.plateau_min_delta,
            enc_steps=cfg.enc_steps,
            dec_steps=cfg.dec_steps,
            val_batches=cfg.val_batches,
            enc_train_snr_db=cfg.enc_train_snr_db,
            dec_train_snr_lo_db=cfg.dec_train_snr_lo_db,
            dec_train_snr_hi_db=cfg.dec_train_snr_hi_db,
            seed=cfg.seed,
        )


class PlateauScheduler:
    """Multiply lr by `factor` when the best loss stalls for `patience` epochs."""

    def __init__(self, lr0: float, patience: int, factor: float = 0.1, min_delta: float = 1e-4):
        self.lr = lr0
        self.patience = patience
        self.factor = factor
        self.min_delta = min_delta
        self.best = np.inf
        self.stale = 0

    def update(self, loss: float) -> float:
        if loss < self.best - self.min_delta:
            self.best = loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr


def plateau_scheduler(history: list[float], cfg: TrainConfig) -> float:
    """Learning rate after replaying a validation-loss history."""
    if not history:
        raise ValueError("plateau_scheduler needs a nonempty history")
    sch = PlateauScheduler(cfg.lr0, cfg.plateau_patience, cfg.plateau_factor, cfg.plateau_min_delta)
    for loss in history:
        sch.update(loss)
    return sch.lr


def _message_batch(seed: int, tag: int, *idx: int, batch: int, K: int) -> np.ndarray:
    g = rng.generator(seed, tag, *idx)
    return (g.integers(0, 2, size=(batch, 1, K)) * 2 - 1).astype(np.float64)


def train_epoch(
    model: CodecModel,
    cfg: TrainConfig,
    phase: str,
    epoch: int,
    opt: AdamState,
    lr: float,
) -> float:
    """One phase round of fresh-batch steps; returns the mean BCE."""
    if phase not in _PHASE_ID:
        raise ValueError(f"phase must be encoder or decoder, got {phase!r}")
    pid = _PHASE_ID[phase]
    steps = cfg.enc_steps if phase == "encoder" else cfg.dec_steps
    model.set_requires_grad("encoder", phase == "encoder")
    model.set_requires_grad("decoder", phase == "decoder")
    params = model.parameters(phase)
    quantized = model.mode.kind in ("binary", "ternary")
    losses = []
    for step in range(steps):
        u = _message_batch(cfg.seed, rng.TAG_TRAIN, pid, epoch, step,
                           batch=cfg.batch_size, K=model.geom.K)
        if phase == "encoder":
            snr_db = cfg.enc_train_snr_db
        else:
            (frac,) = rng.uniforms(cfg.seed, rng.TAG_TRAIN_NOISE, pid, epoch, step, 1, n=1)
            snr_db = cfg.dec_train_snr_lo_db + frac * (cfg.dec_train_snr_hi_db - cfg.dec_train_snr_lo_db)
        sigma = sigma_for_snr_db(snr_db)
        noise = sigma * rng.standard_normals(
            cfg.seed, rng.TAG_TRAIN_NOISE, pid, epoch, step, n=u.size * 3
        ).reshape(u.shape[0], 3, model.geom.K)
        target = (u + 1.0) / 2.0
        with Tape() as tape:
            if phase == "encoder":
                x = model.encode(u, training=True)
                z = add(x, Tensor(noise))
            else:
                x = model.encode(u, training=True)       # no tape entry: encoder frozen
                z = Tensor(x.data + noise)               # detached channel output
            soft, _ = model.decode(z, training=True)
            loss = bce_loss(soft, target.reshape(soft.data.shape))
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, {phase} step {step}: {loss_val}"
                )
            tape.backward(loss)
        adam_step(params, [p.grad for p in params], opt, lr)
        if quantized and phase == "decoder":
            model.clip_quantized_latents()
        for p in model.parameters("all"):
            p.zero_grad()
        losses.append(loss_val)
    return float(np.mean(losses))


def validation_loss(model: CodecModel, cfg: TrainConfig) -> float:
    """Mean BCE over the fixed held-out batches, inference mode."""
    sigma = sigma_for_snr_db(cfg.enc_train_snr_db)
    losses = []
    for i in range(cfg.val_batches):
        u = _message_batch(cfg.seed, rng.TAG_VAL, i, batch=cfg.batch_size, K=model.geom.K)
        noise = sigma * rng.standard_normals(cfg.seed, rng.TAG_VAL, i, 1, n=u.size * 3)
        x = model.encode(u, training=False)
        z = x.data + noise.reshape(u.shape[0], 3, model.geom.K)
        soft, _ = model.decode(z, training=False)
        losses.append(float(bce_loss(soft, ((u + 1.0) / 2.0).reshape(soft.data.shape)).data))
    return float(np.mean(losses))


CURVE_HEADER = "epoch,phase,loss,lr"


def train_full(
    exp: ExperimentConfig, mode: QuantMode | None = None, seed: int | None = None
) -> tuple[CodecModel, str]:
    """Alternating encoder/decoder training; returns (model, curve CSV)."""
    cfg = TrainConfig.from_experiment(exp)
    if seed is not None:
        cfg.seed = seed
    if mode is None:
        mode = exp.quant_mode()
    geom = ModelGeometry(K=exp.k, M=exp.m, F=exp.f, filters=exp.filters,
                         kernel=exp.kernel, enc_layers=exp.enc_layers,
                         dec_layers=exp.dec_layers)
    model = CodecModel(geom, mode, cfg.seed)
    opt_enc = AdamState(model.parameters("encoder"))
    opt_dec = AdamState(model.parameters("decoder"))
    sch = PlateauScheduler(cfg.lr0, cfg.plateau_patience, cfg.plateau_factor, cfg.plateau_min_delta)
    rows = [CURVE_HEADER]
    lr = cfg.lr0
    for epoch in range(cfg.epochs):
        enc_loss = train_epoch(model, cfg, "encoder", epoch, opt_enc, lr)
        rows.append(f"{epoch},encoder,{enc_loss:.8f},{lr:.6g}")
        dec_loss = train_epoch(model, cfg, "decoder", epoch, opt_dec, lr)
        rows.append(f"{epoch},decoder,{dec_loss:.8f},{lr:.6g}")
        val = validation_loss(model, cfg)
        lr = sch.update(val)
        rows.append(f"{epoch},val,{val:.8f},{lr:.6g}")
    model.set_requires_grad("all", True)
    return model, "\n".join(rows) + "\n"


def train_decoder_only(
    model: CodecModel, exp: ExperimentConfig, seed: int
) -> tuple[CodecModel, str]:
    """Train only the decoder of `model` against its frozen encoder."""
    cfg = TrainConfig.from_experiment(exp)
    cfg.seed = seed
    opt_dec = AdamState(model.parameters("decoder"))
    sch = PlateauScheduler(cfg.lr0, cfg.plateau_patience, cfg.plateau_factor, cfg.plateau_min_delta)
    rows = [CURVE_HEADER]
    lr = cfg.lr0
    for epoch in range(cfg.epochs):
        dec_loss = train_epoch(model, cfg, "decoder", epoch, opt_dec, lr)
        val = validation_loss(model, cfg)
        lr = sch.update(val)
        rows.append(f"{epoch},decoder,{dec_loss:.8f},{lr:.6g}")
        rows.append(f"{epoch},val,{val:.8f},{lr:.6g}")
    model.set_requires_grad("all", True)
    return model, "\n".join(rows) + "\n"
