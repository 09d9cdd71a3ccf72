"""Experiment configuration: `key = value` files with profile defaults.

An empty file yields the full-scale defaults (batch 500, lr 1e-4, K=100,
800 epochs, kernel 5, 100 filters, 6 iterations).  ``profile = desk``
swaps in the laptop-scale defaults (16 filters, 2 iterations, 40 epochs,
smaller batches); any explicitly set key overrides its profile default.
Unknown keys are errors, reported with their line number.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .quantize import QuantMode


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    profile: str = "paper"
    mode: str = "real"
    seed: int = 0
    # geometry
    k: int = 100
    m: int = 6
    f: int = 5
    filters: int = 100
    kernel: int = 5
    enc_layers: int = 2
    dec_layers: int = 5
    # training
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
    # sweep
    snr_start: float = -2.0
    snr_end: float = 4.0
    snr_step: float = 1.0
    blocks_per_point: int = 10000
    target_bit_errors: int = 100
    # ensemble
    bag_size: int = 4

    def validate(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r} (have: {', '.join(PROFILES)})")
        try:
            QuantMode.parse(self.mode)
        except ValueError as e:
            raise ConfigError(f"mode: {e}") from e
        for key in ("k", "m", "f", "filters", "batch_size", "epochs", "enc_layers",
                    "dec_layers", "enc_steps", "dec_steps", "val_batches", "bag_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd and >= 1")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must lie in (0, 1)")
        if self.snr_step <= 0:
            raise ConfigError("snr_step must be positive")
        if self.snr_end < self.snr_start:
            raise ConfigError("snr_end must be >= snr_start")
        if self.blocks_per_point < 1:
            raise ConfigError("blocks_per_point must be >= 1")
        if self.target_bit_errors < 0:
            raise ConfigError("target_bit_errors must be >= 0")

    def quant_mode(self) -> QuantMode:
        return QuantMode.parse(self.mode)

    def snr_points(self) -> list[float]:
        pts = []
        s = self.snr_start
        i = 0
        while s <= self.snr_end + 1e-9:
            pts.append(round(s, 9))
            i += 1
            s = self.snr_start + i * self.snr_step
        return pts

    def serialize(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


# profile -> overrides on top of the dataclass (paper-scale) defaults
PROFILES: dict[str, dict] = {
    "paper": {},
    "desk": {
        "filters": 16,
        "m": 2,
        "epochs": 40,
        "batch_size": 64,
        "enc_steps": 4,
        "dec_steps": 20,
        "lr0": 1e-3,
        "plateau_patience": 10,
        "blocks_per_point": 2000,
    },
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, raw: str, lineno: int):
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: invalid value {raw!r} for key {key!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse `key = value` lines; '#' starts a comment."""
    pairs: list[tuple[str, str, int]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        pairs.append((key, raw, lineno))

    cfg = ExperimentConfig()
    # profile first so explicit keys override its defaults
    for key, raw, lineno in pairs:
        if key == "profile":
            cfg.profile = _parse_value(key, raw, lineno)
    if cfg.profile not in PROFILES:
        raise ConfigError(f"unknown profile {cfg.profile!r} (have: {', '.join(PROFILES)})")
    for key, value in PROFILES[cfg.profile].items():
        setattr(cfg, key, value)
    for key, raw, lineno in pairs:
        if key != "profile":
            setattr(cfg, key, _parse_value(key, raw, lineno))
    cfg.validate()
    return cfg


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
