"""Model container file: magic 'BTAE', versioned section table, CRC32.

Layout (all little-endian):
  magic (4 bytes) | version u32 | n_sections u32
  n_sections * (tag 4 bytes | offset u64 | length u64 | crc32 u32)
  payload bytes

Sections by kind:
  META  geometry, mode, seed, kind, bag size
  CONF  originating experiment config text
  ILVR  interleaver seed + permutation
  ENCW  encoder weights + normalization buffers (f64 stream)
  DECW  decoder weights + buffers (real and QAT-latent modes)
  DECQ  post-quantized decoder: q-bit codes + per-tensor scales
  DECA  decoder batchnorm/aux params for post-quantized models
  DWnn  ensemble member nn decoder stream
  PACK  frozen packed decoder blob
  CURV  training curve CSV

Unknown sections are skipped on load; an unknown version is rejected;
a corrupted section is reported by name.
"""

from __future__ import annotations

import io
import zlib
from dataclasses import dataclass

import numpy as np

from .codec import CodecModel, Interleaver, ModelGeometry, PackedDecoder
from .quantize import QuantMode

MAGIC = b"BTAE"
VERSION = 1


class ContainerError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Raw section layer
# ---------------------------------------------------------------------------

def write_container(path: str, sections: list[tuple[bytes, bytes]]) -> None:
    for tag, _ in sections:
        if len(tag) != 4:
            raise ValueError(f"section tag must be 4 bytes, got {tag!r}")
    header = io.BytesIO()
    header.write(MAGIC)
    header.write(np.array([VERSION, len(sections)], dtype="<u4").tobytes())
    table_size = 24 * len(sections)
    offset = 12 + table_size
    for tag, payload in sections:
        header.write(tag)
        header.write(np.array([offset, len(payload)], dtype="<u8").tobytes())
        header.write(np.array([zlib.crc32(payload)], dtype="<u4").tobytes())
        offset += len(payload)
    with open(path, "wb") as fh:
        fh.write(header.getvalue())
        for _, payload in sections:
            fh.write(payload)


def read_container(path: str) -> dict[bytes, bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ContainerError(f"{path}: not a model container (bad magic)")
    version, n = np.frombuffer(blob[4:12], dtype="<u4")
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    sections: dict[bytes, bytes] = {}
    off = 12
    for _ in range(int(n)):
        tag = blob[off:off + 4]
        start, length = np.frombuffer(blob[off + 4:off + 20], dtype="<u8")
        (crc,) = np.frombuffer(blob[off + 20:off + 24], dtype="<u4")
        off += 24
        payload = blob[int(start):int(start) + int(length)]
        if len(payload) != int(length):
            raise ContainerError(f"{path}: section {tag.decode()} is truncated")
        if zlib.crc32(payload) != int(crc):
            raise ContainerError(f"{path}: section {tag.decode()} failed its checksum")
        sections[tag] = payload
    return sections


# ---------------------------------------------------------------------------
# Weight streams
# ---------------------------------------------------------------------------

def _stream_arrays(arrays: list[np.ndarray]) -> bytes:
    if not arrays:
        return b""
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays]).astype("<f8").tobytes()


def _unstream_into(blob: bytes, arrays: list[np.ndarray]) -> None:
    flat = np.frombuffer(blob, dtype="<f8")
    pos = 0
    for a in arrays:
        n = a.size
        a[...] = flat[pos:pos + n].reshape(a.shape)
        pos += n
    if pos != flat.size:
        raise ContainerError("weight stream length does not match model geometry")


def _encoder_arrays(model: CodecModel) -> list[np.ndarray]:
    out = [p.data for p in model.parameters("encoder")]
    for l in model.encoder_layers():
        out.extend(l.buffers())
    for st in model.power:
        out.extend([st.mean, st.var])
    return out


def _decoder_arrays(model: CodecModel) -> list[np.ndarray]:
    out = [p.data for p in model.parameters("decoder")]
    for l in model.decoder_layers():
        out.extend(l.buffers())
    return out


# ---------------------------------------------------------------------------
# Post-quant code streams
# ---------------------------------------------------------------------------

def _pack_codes(codes: np.ndarray, q: int) -> bytes:
    from .bitkernel.bitplane import pack_rows
    bits = ((codes.ravel()[:, None] >> np.arange(q)) & 1).astype(np.uint64).ravel()
    return pack_rows(bits).astype("<u8").tobytes()

def _unpack_codes(blob: bytes, q: int, n: int) -> np.ndarray:
    from .bitkernel.bitplane import unpack_rows
    words = np.frombuffer(blob, dtype="<u8")
    bits = unpack_rows(words, n * q).reshape(n, q).astype(np.uint8)
    return (bits << np.arange(q, dtype=np.uint8)).sum(axis=1, dtype=np.uint8)


def _quant_stream(model: CodecModel) -> bytes:
    from .quantize import quantize_codes
    q = model.mode.q
    buf = io.BytesIO()
    for layer in model.decoder_layers():
        for t in (layer.w, layer.b):
            if t is None:
                continue
            codes, scale = quantize_codes(t.data, q)
            buf.write(np.array([scale], dtype="<f8").tobytes())
            buf.write(_pack_codes(codes, q))
    return buf.getvalue()


def _load_quant_stream(model: CodecModel, blob: bytes) -> None:
    from .quantize import dequantize_codes
    from .bitkernel.bitplane import words_needed
    q = model.mode.q
    off = 0
    for layer in model.decoder_layers():
        for t in (layer.w, layer.b):
            if t is None:
                continue
            (scale,) = np.frombuffer(blob[off:off + 8], dtype="<f8")
            off += 8
            n = t.data.size
            nbytes = 8 * words_needed(n * q)
            codes = _unpack_codes(blob[off:off + nbytes], q, n)
            off += nbytes
            t.data[...] = dequantize_codes(codes, q, float(scale)).reshape(t.data.shape)
    if off != len(blob):
        raise ContainerError("post-quant stream length does not match model geometry")


def _decoder_aux_arrays(model: CodecModel) -> list[np.ndarray]:
    out = []
    for l in model.decoder_layers():
        if l.has_bn:
            out.extend([l.gamma.data, l.beta.data])
        out.extend(l.buffers())
    return out


# ---------------------------------------------------------------------------
# High-level save/load
# ---------------------------------------------------------------------------

@dataclass
class LoadedModel:
    kind: str                       # single | ensemble | packed
    mode: QuantMode
    geometry: ModelGeometry
    seed: int
    config_text: str
    model: CodecModel | None = None
    members: list[CodecModel] | None = None
    packed: PackedDecoder | None = None
    encoder_host: CodecModel | None = None   # packed files: supplies encode()
    curve_text: str = ""


def _meta_bytes(geom: ModelGeometry, mode: QuantMode, seed: int, kind: str, bag: int) -> bytes:
    kinds = {"single": 0, "ensemble": 1, "packed": 2}
    head = np.array(
        [geom.K, geom.M, geom.F, geom.filters, geom.kernel, geom.enc_layers,
         geom.dec_layers, kinds[kind], bag],
        dtype="<u4",
    ).tobytes()
    head += np.array([seed], dtype="<u8").tobytes()
    mode_b = str(mode).encode()
    return head + np.array([len(mode_b)], dtype="<u4").tobytes() + mode_b


def _parse_meta(blob: bytes) -> tuple[ModelGeometry, QuantMode, int, str, int]:
    vals = np.frombuffer(blob[:36], dtype="<u4")
    geom = ModelGeometry(*(int(v) for v in vals[:7]))
    kind = {0: "single", 1: "ensemble", 2: "packed"}[int(vals[7])]
    bag = int(vals[8])
    (seed,) = np.frombuffer(blob[36:44], dtype="<u8")
    (mlen,) = np.frombuffer(blob[44:48], dtype="<u4")
    mode = QuantMode.parse(blob[48:48 + int(mlen)].decode())
    return geom, mode, int(seed), kind, bag


def _interleaver_bytes(iv: Interleaver) -> bytes:
    return (
        np.array([iv.seed], dtype="<u8").tobytes()
        + np.array([iv.K], dtype="<u4").tobytes()
        + iv.perm.astype("<u4").tobytes()
    )


def _parse_interleaver(blob: bytes) -> Interleaver:
    (seed,) = np.frombuffer(blob[:8], dtype="<u8")
    (K,) = np.frombuffer(blob[8:12], dtype="<u4")
    perm = np.frombuffer(blob[12:12 + 4 * int(K)], dtype="<u4").astype(np.int64)
    return Interleaver(perm, int(seed))


def save_model(path: str, model: CodecModel, config_text: str = "", curve_text: str = "") -> None:
    sections = [
        (b"META", _meta_bytes(model.geom, model.mode, model.seed, "single", 1)),
        (b"CONF", config_text.encode()),
        (b"ILVR", _interleaver_bytes(model.interleaver)),
        (b"ENCW", _stream_arrays(_encoder_arrays(model))),
    ]
    if model.mode.kind == "quant":
        sections.append((b"DECQ", _quant_stream(model)))
        sections.append((b"DECA", _stream_arrays(_decoder_aux_arrays(model))))
    else:
        sections.append((b"DECW", _stream_arrays(_decoder_arrays(model))))
    sections.append((b"CURV", curve_text.encode()))
    write_container(path, sections)


def save_ensemble(path: str, members: list[CodecModel], config_text: str = "", curve_text: str = "") -> None:
    if not members:
        raise ValueError("ensemble needs at least one member")
    first = members[0]
    for m in members[1:]:
        if m.geom != first.geom or str(m.mode) != str(first.mode):
            raise ValueError("ensemble members must share geometry and mode")
        if not np.array_equal(m.interleaver.perm, first.interleaver.perm):
            raise ValueError("ensemble members must share the interleaver")
    sections = [
        (b"META", _meta_bytes(first.geom, first.mode, first.seed, "ensemble", len(members))),
        (b"CONF", config_text.encode()),
        (b"ILVR", _interleaver_bytes(first.interleaver)),
        (b"ENCW", _stream_arrays(_encoder_arrays(first))),
    ]
    for i, m in enumerate(members):
        sections.append((f"DW{i:02d}".encode(), _stream_arrays(_decoder_arrays(m))))
    sections.append((b"CURV", curve_text.encode()))
    write_container(path, sections)


def save_packed(path: str, model: CodecModel, packed: PackedDecoder,
                config_text: str = "", curve_text: str = "") -> None:
    sections = [
        (b"META", _meta_bytes(model.geom, model.mode, model.seed, "packed", 1)),
        (b"CONF", config_text.encode()),
        (b"ILVR", _interleaver_bytes(model.interleaver)),
        (b"ENCW", _stream_arrays(_encoder_arrays(model))),
        (b"PACK", packed.to_bytes()),
        (b"CURV", curve_text.encode()),
    ]
    write_container(path, sections)


def load_model(path: str) -> LoadedModel:
    sections = read_container(path)
    for required in (b"META", b"ILVR", b"ENCW"):
        if required not in sections:
            raise ContainerError(f"{path}: missing required section {required.decode()}")
    geom, mode, seed, kind, bag = _parse_meta(sections[b"META"])
    iv = _parse_interleaver(sections[b"ILVR"])
    config_text = sections.get(b"CONF", b"").decode()
    curve_text = sections.get(b"CURV", b"").decode()

    def build_host() -> CodecModel:
        m = CodecModel(geom, mode, seed)
        m.interleaver = iv
        _unstream_into(sections[b"ENCW"], _encoder_arrays(m))
        return m

    out = LoadedModel(kind=kind, mode=mode, geometry=geom, seed=seed,
                      config_text=config_text, curve_text=curve_text)
    if kind == "single":
        model = build_host()
        if mode.kind == "quant":
            _load_quant_stream(model, sections[b"DECQ"])
            _unstream_into(sections[b"DECA"], _decoder_aux_arrays(model))
        else:
            _unstream_into(sections[b"DECW"], _decoder_arrays(model))
        out.model = model
    elif kind == "ensemble":
        members = []
        for i in range(bag):
            m = build_host()
            tag = f"DW{i:02d}".encode()
            if tag not in sections:
                raise ContainerError(f"{path}: missing ensemble member section {tag.decode()}")
            _unstream_into(sections[tag], _decoder_arrays(m))
            members.append(m)
        out.members = members
        out.model = members[0]
    elif kind == "packed":
        host = build_host()
        out.encoder_host = host
        out.packed = PackedDecoder.from_bytes(sections[b"PACK"], iv)
    return out
