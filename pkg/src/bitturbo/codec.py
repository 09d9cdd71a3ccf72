"""Turbo-style interleaved CNN encoder and iterative CNN decoder.

Structure (rate 1/3, block length K):
  * three encoder blocks; the first two read the message u, the third
    reads the interleaved message.  Each block is a small conv stack
    plus a 1x1 linear head down to one stream, followed by per-stream
    power normalization (zero mean, unit variance).
  * M decoder iterations of two blocks each.  Per iteration i the first
    block maps [z1; z2; prior] to an F-channel posterior, the second
    maps [interleave(z1); z3; interleave(posterior)] to the next prior
    (deinterleaved), except that the very last block emits one channel
    which becomes the bit estimate through a sigmoid.
  * prior starts at zeros; hard decisions are soft >= 0.5, ties +1.

In binary/ternary modes every decoder conv uses the quantized view of
its latent weights (straight-through gradients) and sign activations;
block inputs stay real because channel outputs and priors are real, so
each block's first conv runs in the float domain even after freezing.
Encoder weights are never quantized.

``freeze_for_edge`` converts a trained binary/ternary decoder into a
:class:`PackedDecoder`: per block a float-input entry layer with
batchnorm folded into per-channel real thresholds, then packed
xnor-popcount layers with integer thresholds, then an integer-count
linear head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .quantize import QuantMode, binarize, sign_pm1, tern, ternarize, ternary_delta
from .tensor import (
    ConvLayerSpec,
    RunningStats,
    Tensor,
    _finish,
    batchnorm1d,
    concat_channels,
    conv1d,
    conv1d_forward,
    elu,
    sigmoid,
    standardize,
    take_positions,
)
from .bitkernel import (
    LayerShape,
    PackedConvLayer,
    freeze_conv_layer,
    pack_activations,
    packed_conv1d,
    packed_conv1d_counts,
)

BN_EPS = 1e-5


# ---------------------------------------------------------------------------
# Interleaver
# ---------------------------------------------------------------------------

class Interleaver:
    """Fixed random permutation of block positions, shared by both ends."""

    def __init__(self, perm: np.ndarray, seed: int):
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(len(perm))):
            raise ValueError("interleaver permutation must be a bijection on [0, K)")
        self.perm = perm
        self.inv_perm = np.argsort(perm)
        self.seed = seed

    @classmethod
    def generate(cls, K: int, seed: int) -> "Interleaver":
        # Fisher-Yates driven by a dedicated stream
        g = rng.generator(seed, rng.TAG_INTERLEAVER)
        perm = np.arange(K, dtype=np.int64)
        for i in range(K - 1, 0, -1):
            j = int(g.integers(0, i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return cls(perm, seed)

    @property
    def K(self) -> int:
        return len(self.perm)

    def interleave(self, x):
        if isinstance(x, Tensor):
            return take_positions(x, self.perm)
        return np.asarray(x)[..., self.perm]

    def deinterleave(self, x):
        if isinstance(x, Tensor):
            return take_positions(x, self.inv_perm)
        return np.asarray(x)[..., self.inv_perm]


# ---------------------------------------------------------------------------
# Layers and blocks
# ---------------------------------------------------------------------------

class ConvBNLayer:
    """conv -> (batchnorm) -> activation, with optional weight quantization."""

    def __init__(self, spec: ConvLayerSpec, has_bn: bool, quant: str, init: np.random.Generator):
        self.spec = spec
        self.has_bn = has_bn
        self.quant = quant  # "real" | "binary" | "ternary" (forward-time view)
        scale = 1.0 / np.sqrt(spec.c_in * spec.k)
        self.w = Tensor(init.normal(0.0, scale, (spec.c_out, spec.c_in, spec.k)), requires_grad=True)
        self.b = Tensor(init.uniform(-0.05, 0.05, spec.c_out), requires_grad=True) if spec.has_bias else None
        if has_bn:
            self.gamma = Tensor(np.ones(spec.c_out), requires_grad=True)
            self.beta = Tensor(np.zeros(spec.c_out), requires_grad=True)
            self.running = RunningStats.for_channels(spec.c_out)
        else:
            self.gamma = self.beta = self.running = None

    def quantized_weights(self) -> tuple[np.ndarray, np.ndarray | None]:
        """The deployed view of (w, b) under this layer's quantization."""
        if self.quant == "binary":
            wq = sign_pm1(self.w.data)
            bq = None if self.b is None else sign_pm1(self.b.data)
        elif self.quant == "ternary":
            wq = tern(self.w.data, ternary_delta(self.w.data))
            bq = None if self.b is None else tern(self.b.data, ternary_delta(self.b.data))
        else:
            wq = self.w.data
            bq = None if self.b is None else self.b.data
        return wq, bq

    def forward(self, x: Tensor, training: bool) -> Tensor:
        if self.quant == "binary":
            w = binarize(self.w)
            b = None if self.b is None else binarize(self.b)
        elif self.quant == "ternary":
            w = ternarize(self.w)
            b = None if self.b is None else ternarize(self.b)
        else:
            w, b = self.w, self.b
        y = conv1d(x, w, b)
        if self.has_bn:
            y = batchnorm1d(y, self.gamma, self.beta, self.running, training, BN_EPS)
        act = self.spec.activation
        if act == "elu":
            return elu(y)
        if act == "sign-binary":
            return binarize(y)
        if act == "sigmoid":
            return sigmoid(y)
        return y

    def parameters(self) -> list[Tensor]:
        ps = [self.w]
        if self.b is not None:
            ps.append(self.b)
        if self.has_bn:
            ps.extend([self.gamma, self.beta])
        return ps

    def latent_tensors(self) -> list[Tensor]:
        """Tensors that must stay clipped to [-1, 1] under QAT."""
        if self.quant in ("binary", "ternary"):
            return [self.w] if self.b is None else [self.w, self.b]
        return []

    def buffers(self) -> list[np.ndarray]:
        return [self.running.mean, self.running.var] if self.has_bn else []

    def set_buffers(self, arrays: list[np.ndarray]) -> None:
        if self.has_bn:
            self.running.mean, self.running.var = arrays

    def shape(self, h: int) -> LayerShape:
        return LayerShape(self.spec.c_in, self.spec.c_out, self.spec.k, h, self.spec.has_bias)


class Block:
    """Conv stack plus 1x1 linear head."""

    def __init__(
        self,
        c_in: int,
        filters: int,
        kernel: int,
        n_layers: int,
        head_out: int,
        hidden_act: str,
        quant: str,
        init: np.random.Generator,
    ):
        self.layers = []
        for i in range(n_layers):
            spec = ConvLayerSpec(c_in if i == 0 else filters, filters, kernel, activation=hidden_act)
            self.layers.append(ConvBNLayer(spec, has_bn=True, quant=quant, init=init))
        head_spec = ConvLayerSpec(filters, head_out, 1, activation="linear")
        self.head = ConvBNLayer(head_spec, has_bn=False, quant=quant, init=init)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x, training)
        return self.head.forward(x, training)

    def all_layers(self) -> list[ConvBNLayer]:
        return [*self.layers, self.head]

    def parameters(self) -> list[Tensor]:
        return [p for l in self.all_layers() for p in l.parameters()]


# ---------------------------------------------------------------------------
# Codec model
# ---------------------------------------------------------------------------

@dataclass
class ModelGeometry:
    K: int = 100
    M: int = 6
    F: int = 5
    filters: int = 100
    kernel: int = 5
    enc_layers: int = 2
    dec_layers: int = 5


class CodecModel:
    def __init__(self, geom: ModelGeometry, mode: QuantMode, seed: int):
        self.geom = geom
        self.mode = mode
        self.seed = seed
        self.interleaver = Interleaver.generate(geom.K, seed)
        init = rng.generator(seed, rng.TAG_INIT)
        dec_quant = mode.kind if mode.kind in ("binary", "ternary") else "real"
        dec_act = "sign-binary" if mode.binary_activations else "elu"
        self.enc_blocks = [
            Block(1, geom.filters, geom.kernel, geom.enc_layers, 1, "elu", "real", init)
            for _ in range(3)
        ]
        self.power = [RunningStats.for_channels(1) for _ in range(3)]
        self.dec_blocks: list[tuple[Block, Block]] = []
        for i in range(geom.M):
            g1 = Block(2 + geom.F, geom.filters, geom.kernel, geom.dec_layers,
                       geom.F, dec_act, dec_quant, init)
            head_out = 1 if i == geom.M - 1 else geom.F
            g2 = Block(2 + geom.F, geom.filters, geom.kernel, geom.dec_layers,
                       head_out, dec_act, dec_quant, init)
            self.dec_blocks.append((g1, g2))

    # --- forward paths ---

    def encode(self, u, training: bool = False) -> Tensor:
        ut = u if isinstance(u, Tensor) else Tensor(u)
        if ut.data.ndim != 3 or ut.data.shape[1] != 1 or ut.data.shape[2] != self.geom.K:
            raise ValueError(f"encode expects (b, 1, K={self.geom.K}), got {ut.data.shape}")
        if not np.all(np.abs(ut.data) == 1.0):
            raise ValueError("encode expects message bits in {-1, +1}")
        u_pi = self.interleaver.interleave(ut)
        streams = []
        for b_idx, (block, x_in) in enumerate(
            zip(self.enc_blocks, [ut, ut, u_pi])
        ):
            xi = block.forward(x_in, training)
            streams.append(standardize(xi, self.power[b_idx], training))
        return concat_channels(streams)

    def decode(self, z, training: bool = False) -> tuple[Tensor, np.ndarray]:
        zt = z if isinstance(z, Tensor) else Tensor(z)
        b, c, K = zt.data.shape
        if c != 3 or K != self.geom.K:
            raise ValueError(f"decode expects (b, 3, K={self.geom.K}), got {zt.data.shape}")
        iv = self.interleaver
        z1 = slice_channel(zt, 0)
        z2 = slice_channel(zt, 1)
        z3 = slice_channel(zt, 2)
        z1_pi = iv.interleave(z1)
        prior = Tensor(np.zeros((b, self.geom.F, K)))
        for i, (g1, g2) in enumerate(self.dec_blocks):
            q = g1.forward(concat_channels([z1, z2, prior]), training)
            out2 = g2.forward(concat_channels([z1_pi, z3, iv.interleave(q)]), training)
            if i < self.geom.M - 1:
                prior = iv.deinterleave(out2)
        soft = sigmoid(iv.deinterleave(out2))
        hard = np.where(soft.data >= 0.5, 1.0, -1.0)
        return soft, hard

    # --- parameter bookkeeping ---

    def encoder_layers(self) -> list[ConvBNLayer]:
        return [l for blk in self.enc_blocks for l in blk.all_layers()]

    def decoder_layers(self) -> list[ConvBNLayer]:
        return [l for pair in self.dec_blocks for blk in pair for l in blk.all_layers()]

    def parameters(self, side: str = "all") -> list[Tensor]:
        layers = {
            "encoder": self.encoder_layers,
            "decoder": self.decoder_layers,
            "all": lambda: self.encoder_layers() + self.decoder_layers(),
        }[side]()
        return [p for l in layers for p in l.parameters()]

    def set_requires_grad(self, side: str, flag: bool) -> None:
        for p in self.parameters(side):
            p.requires_grad = flag

    def clip_quantized_latents(self) -> None:
        for l in self.decoder_layers():
            for t in l.latent_tensors():
                np.clip(t.data, -1.0, 1.0, out=t.data)

    def buffers(self, side: str) -> list[np.ndarray]:
        out = []
        if side in ("encoder", "all"):
            for l in self.encoder_layers():
                out.extend(l.buffers())
            for st in self.power:
                out.extend([st.mean, st.var])
        if side in ("decoder", "all"):
            for l in self.decoder_layers():
                out.extend(l.buffers())
        return out

    def decoder_cost_layers(self) -> list[LayerShape]:
        return [l.shape(self.geom.K) for l in self.decoder_layers()]

    def encoder_cost_layers(self) -> list[LayerShape]:
        return [l.shape(self.geom.K) for l in self.encoder_layers()]

    # --- freeze ---

    def freeze_for_edge(self) -> "PackedDecoder":
        if not self.mode.packable:
            raise ValueError(f"mode {self.mode} is not packable (binary/ternary only)")
        blocks = []
        for g1, g2 in self.dec_blocks:
            blocks.extend([_freeze_block(g1), _freeze_block(g2)])
        return PackedDecoder(self.geom, self.interleaver, blocks)


def slice_channel(x: Tensor, idx: int) -> Tensor:
    """(b, c, h) -> (b, 1, h) without breaking the tape."""
    out = x.data[:, idx:idx + 1, :]

    def backward(o: Tensor):
        if x.requires_grad:
            g = np.zeros_like(x.data)
            g[:, idx:idx + 1, :] = o.grad
            x.accumulate(g)

    return _finish(out, (x,), backward)


# ---------------------------------------------------------------------------
# Frozen edge decoder
# ---------------------------------------------------------------------------

@dataclass
class EntryLayer:
    """First conv of a block: real inputs, quantized weights, folded sign.

    Output bit: conv(x, w) + bias >= threshold per channel (threshold may
    be +-inf for constant channels from degenerate batchnorm scale).
    """

    w: np.ndarray          # (c_out, c_in, k) in {-1, 0, +1}, flip-folded
    bias: np.ndarray       # (c_out,) integer-valued
    threshold: np.ndarray  # (c_out,) float64

    def forward_pm1(self, x: np.ndarray) -> np.ndarray:
        y, _, _ = conv1d_forward(x, self.w, self.bias)
        return np.where(y >= self.threshold[None, :, None], 1.0, -1.0)

    def to_bytes(self) -> bytes:
        c_out, c_in, k = self.w.shape
        head = np.array([c_in, c_out, k], dtype="<u4").tobytes()
        taps = self.w.transpose(0, 2, 1).reshape(c_out, k * c_in)
        from .bitkernel.bitplane import pack_rows
        sign = pack_rows((taps > 0).astype(np.uint64)).astype("<u8")
        mask = pack_rows((taps != 0).astype(np.uint64)).astype("<u8")
        return (
            head
            + self.bias.astype("<i4").tobytes()
            + self.threshold.astype("<f8").tobytes()
            + sign.tobytes()
            + mask.tobytes()
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple["EntryLayer", int]:
        from .bitkernel.bitplane import unpack_rows, words_needed
        c_in, c_out, k = (int(v) for v in np.frombuffer(blob[:12], dtype="<u4"))
        off = 12
        bias = np.frombuffer(blob[off:off + 4 * c_out], dtype="<i4").astype(np.float64)
        off += 4 * c_out
        thr = np.frombuffer(blob[off:off + 8 * c_out], dtype="<f8").copy()
        off += 8 * c_out
        nw = words_needed(c_in * k)
        nbytes = 8 * c_out * nw
        sign = np.frombuffer(blob[off:off + nbytes], dtype="<u8").reshape(c_out, nw)
        off += nbytes
        mask = np.frombuffer(blob[off:off + nbytes], dtype="<u8").reshape(c_out, nw)
        off += nbytes
        s = unpack_rows(sign, c_in * k).astype(np.float64) * 2 - 1
        m = unpack_rows(mask, c_in * k).astype(np.float64)
        w = (s * m).reshape(c_out, k, c_in).transpose(0, 2, 1)
        return cls(np.ascontiguousarray(w), bias, thr), off


@dataclass
class PackedBlock:
    entry: EntryLayer
    hidden: list[PackedConvLayer]
    head: PackedConvLayer  # threshold None: integer counts out

    def forward_counts(self, x_real: np.ndarray, h: int, backend: str | None) -> np.ndarray:
        bits = pack_activations(self.entry.forward_pm1(x_real))
        for layer in self.hidden:
            bits = packed_conv1d(bits, h, layer, backend=backend)
        return packed_conv1d_counts(bits, h, self.head, backend=backend).astype(np.float64)


def _fold_entry(layer: ConvBNLayer) -> EntryLayer:
    wq, bq = layer.quantized_weights()
    b = np.zeros(layer.spec.c_out) if bq is None else bq
    sd = np.sqrt(layer.running.var + BN_EPS)
    gamma, beta = layer.gamma.data, layer.beta.data
    flip = np.where(gamma < 0.0, -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = layer.running.mean - beta * sd / gamma
    thr = flip * r
    thr = np.where(gamma == 0.0, np.where(beta >= 0.0, -np.inf, np.inf), thr)
    return EntryLayer(
        w=np.ascontiguousarray(wq * flip[:, None, None]),
        bias=b * flip,
        threshold=thr,
    )


def _freeze_block(block: Block) -> PackedBlock:
    entry = _fold_entry(block.layers[0])
    hidden = []
    for layer in block.layers[1:]:
        wq, bq = layer.quantized_weights()
        hidden.append(
            freeze_conv_layer(
                wq, bq, layer.gamma.data, layer.beta.data,
                layer.running.mean, layer.running.var, BN_EPS,
            )
        )
    wq, bq = block.head.quantized_weights()
    head = freeze_conv_layer(wq, bq, None, None, None, None)
    return PackedBlock(entry, hidden, head)


class PackedDecoder:
    """Deployable decoder: float entry per block, bit-ops everywhere else."""

    def __init__(self, geom: ModelGeometry, interleaver: Interleaver, blocks: list[PackedBlock]):
        if len(blocks) != 2 * geom.M:
            raise ValueError("packed decoder needs two blocks per iteration")
        self.geom = geom
        self.interleaver = interleaver
        self.blocks = blocks

    def decode_hard(self, z: np.ndarray, backend: str | None = None) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        b, c, K = z.shape
        if c != 3 or K != self.geom.K:
            raise ValueError(f"decode expects (b, 3, K={self.geom.K}), got {z.shape}")
        iv = self.interleaver
        z1, z2, z3 = z[:, 0:1], z[:, 1:2], z[:, 2:3]
        z1_pi = iv.interleave(z1)
        prior = np.zeros((b, self.geom.F, K))
        for i in range(self.geom.M):
            g1, g2 = self.blocks[2 * i], self.blocks[2 * i + 1]
            q = g1.forward_counts(np.concatenate([z1, z2, prior], axis=1), K, backend)
            out2 = g2.forward_counts(
                np.concatenate([z1_pi, z3, iv.interleave(q)], axis=1), K, backend
            )
            if i < self.geom.M - 1:
                prior = iv.deinterleave(out2)
        counts = iv.deinterleave(out2)
        # sigmoid(c) >= 0.5  <=>  c >= 0, ties to +1
        return np.where(counts >= 0.0, 1.0, -1.0)

    def to_bytes(self) -> bytes:
        geom = self.geom
        head = np.array(
            [geom.K, geom.M, geom.F, geom.filters, geom.kernel, geom.enc_layers, geom.dec_layers],
            dtype="<u4",
        ).tobytes()
        parts = [head]
        for blk in self.blocks:
            parts.append(blk.entry.to_bytes())
            for layer in blk.hidden:
                parts.append(layer.to_bytes())
            parts.append(blk.head.to_bytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes, interleaver: Interleaver) -> "PackedDecoder":
        vals = np.frombuffer(blob[:28], dtype="<u4")
        geom = ModelGeometry(*(int(v) for v in vals))
        off = 28
        blocks = []
        for _ in range(2 * geom.M):
            entry, n = EntryLayer.from_bytes(blob[off:])
            off += n
            hidden = []
            for _ in range(geom.dec_layers - 1):
                layer, n = PackedConvLayer.from_bytes(blob[off:])
                off += n
                hidden.append(layer)
            head, n = PackedConvLayer.from_bytes(blob[off:])
            off += n
            blocks.append(PackedBlock(entry, hidden, head))
        return cls(geom, interleaver, blocks)

    def storage_bits(self) -> int:
        total = 0
        for blk in self.blocks:
            c_out, c_in, k = blk.entry.w.shape
            total += c_out * c_in * k + 32 * c_out + 64 * c_out  # taps + bias + f64 thr
            for layer in blk.hidden:
                total += layer.storage_bits()
            total += blk.head.storage_bits()
        return total


def apply_post_quant(model: CodecModel, q: int) -> None:
    """Replace decoder conv weights/biases with their q-bit codebook values.

    Mutates the model in place and flips its mode to quant-q; activations
    stay real (this is the post-training-quantization baseline, which
    saves memory but not compute).
    """
    from .quantize import post_quantize
    if model.mode.kind != "real":
        raise ValueError("post-training quantization applies to a real-mode model")
    for layer in model.decoder_layers():
        layer.w.data = post_quantize(layer.w.data, q)
        if layer.b is not None:
            layer.b.data = post_quantize(layer.b.data, q)
    model.mode = QuantMode("quant", q)
