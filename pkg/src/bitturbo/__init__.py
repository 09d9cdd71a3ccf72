"""bitturbo: turbo-style neural channel codes with binary/ternary
decoders, xnor-popcount edge inference, bagged ensembles, and an AWGN
BER sweep harness."""

__version__ = "0.1.0"

from .quantize import QuantMode
from .codec import CodecModel, Interleaver, ModelGeometry, PackedDecoder
from .channel import ChannelSpec, ErrorStats, awgn, measure
from .config import ExperimentConfig, parse_config
from .container import load_model, save_model
from .ensemble import EnsembleModel, bag_decode, train_bag
from .train import TrainConfig, train_full

__all__ = [
    "QuantMode",
    "CodecModel",
    "Interleaver",
    "ModelGeometry",
    "PackedDecoder",
    "ChannelSpec",
    "ErrorStats",
    "awgn",
    "measure",
    "ExperimentConfig",
    "parse_config",
    "load_model",
    "save_model",
    "EnsembleModel",
    "bag_decode",
    "train_bag",
    "TrainConfig",
    "train_full",
]
