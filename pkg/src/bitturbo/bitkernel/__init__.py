"""Bitpacked inference kernels.

The hot loops (xnor-popcount packed convolution and the naive float
reference convolution) live in a compiled extension, ``_core``.  A pure
numpy fallback with identical semantics is selected at import when the
extension is unavailable, or when ``BITTURBO_BACKEND=python`` is set.
``bench_kernels.py`` in the repo compares both.
"""

import os as _os

from . import _fallback

if _os.environ.get("BITTURBO_BACKEND", "").lower() == "python":
    _ext = None
else:
    try:
        from . import _core as _ext
    except ImportError:
        _ext = None

BACKEND = "ext" if _ext is not None else "python"


def backend_module(name: str | None = None):
    """Kernel module for `name` ('ext' or 'python'); default is the active one."""
    if name is None:
        name = BACKEND
    if name == "ext":
        if _ext is None:
            raise RuntimeError("compiled kernel extension is not available")
        return _ext
    if name == "python":
        return _fallback
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    return ["ext", "python"] if _ext is not None else ["python"]


from .bitplane import BitPlane, pack_bits, unpack_bits, xnor_dot, ternary_dot
from .packed import (
    PackedConvLayer,
    pack_activations,
    unpack_activations,
    freeze_conv_layer,
    packed_conv1d,
    packed_conv1d_counts,
    float_conv1d_naive,
)
from .costing import LayerShape, CostReport, cost_report

__all__ = [
    "BACKEND",
    "backend_module",
    "available_backends",
    "BitPlane",
    "pack_bits",
    "unpack_bits",
    "xnor_dot",
    "ternary_dot",
    "PackedConvLayer",
    "pack_activations",
    "unpack_activations",
    "freeze_conv_layer",
    "packed_conv1d",
    "packed_conv1d_counts",
    "float_conv1d_naive",
    "LayerShape",
    "CostReport",
    "cost_report",
]
