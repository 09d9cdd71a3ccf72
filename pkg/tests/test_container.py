import copy

import numpy as np
import pytest

from bitturbo.codec import CodecModel, ModelGeometry, apply_post_quant
from bitturbo.container import (
    ContainerError,
    load_model,
    read_container,
    save_ensemble,
    save_model,
    save_packed,
    write_container,
)
from bitturbo.quantize import QuantMode

GEOM = ModelGeometry(K=12, M=1, F=2, filters=4, kernel=3, enc_layers=1, dec_layers=2)


def _model(mode="real", seed=1):
    return CodecModel(GEOM, QuantMode(mode), seed=seed)


# ---------------------------------------------------------------------------
# raw container
# ---------------------------------------------------------------------------

def test_container_roundtrip_bytes(tmp_path):
    p = tmp_path / "x.btae"
    sections = [(b"AAAA", b"hello"), (b"BBBB", b"\x00" * 100)]
    write_container(str(p), sections)
    back = read_container(str(p))
    assert back[b"AAAA"] == b"hello"
    assert back[b"BBBB"] == b"\x00" * 100


def test_container_save_load_save_identical(tmp_path):
    a = tmp_path / "a.btae"
    b = tmp_path / "b.btae"
    model = _model()
    save_model(str(a), model, "cfg text", "curve")
    loaded = load_model(str(a))
    save_model(str(b), loaded.model, loaded.config_text, loaded.curve_text)
    assert a.read_bytes() == b.read_bytes()


def test_container_rejects_corruption_naming_section(tmp_path):
    p = tmp_path / "x.btae"
    save_model(str(p), _model(), "cfg", "curve")
    blob = bytearray(p.read_bytes())
    blob[-3] ^= 0xFF  # corrupt inside the last section payload
    p.write_bytes(bytes(blob))
    with pytest.raises(ContainerError, match="CURV"):
        load_model(str(p))


def test_container_rejects_bad_magic_and_version(tmp_path):
    p = tmp_path / "x.btae"
    p.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(ContainerError, match="magic"):
        read_container(str(p))
    save_model(str(p), _model(), "", "")
    blob = bytearray(p.read_bytes())
    blob[4] = 99  # version
    p.write_bytes(bytes(blob))
    with pytest.raises(ContainerError, match="version"):
        read_container(str(p))


def test_unknown_sections_are_skipped(tmp_path):
    p = tmp_path / "x.btae"
    model = _model()
    save_model(str(p), model, "cfg", "curve")
    sections = read_container(str(p))
    items = list(sections.items()) + [(b"ZZZZ", b"future data")]
    write_container(str(p), items)
    loaded = load_model(str(p))  # must not raise
    assert loaded.kind == "single"


def test_rejects_bad_tag():
    with pytest.raises(ValueError):
        write_container("/tmp/never.btae", [(b"TOOLONG", b"")])


# ---------------------------------------------------------------------------
# model payloads
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["real", "binary", "ternary"])
def test_model_roundtrip_exact(tmp_path, mode):
    p = tmp_path / "m.btae"
    model = _model(mode)
    g = np.random.default_rng(7)
    for t in model.parameters("all"):
        t.data[...] = g.normal(size=t.data.shape)
    save_model(str(p), model, "c", "v")
    back = load_model(str(p))
    assert str(back.mode) == mode
    assert back.geometry == GEOM
    for a, b in zip(model.parameters("all"), back.model.parameters("all")):
        np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(model.interleaver.perm, back.model.interleaver.perm)
    z = g.normal(size=(5, 3, GEOM.K))
    np.testing.assert_array_equal(model.decode(z)[1], back.model.decode(z)[1])


def test_binary_model_roundtrip_reports_sign_weights(tmp_path):
    p = tmp_path / "m.btae"
    save_model(str(p), _model("binary"), "", "")
    back = load_model(str(p))
    assert back.mode.kind == "binary"
    for layer in back.model.decoder_layers():
        wq, _ = layer.quantized_weights()
        assert set(np.unique(wq)) <= {-1.0, 1.0}


def test_quant_model_roundtrip(tmp_path):
    p = tmp_path / "m.btae"
    model = _model("real")
    g = np.random.default_rng(9)
    for t in model.parameters("all"):
        t.data[...] = g.normal(size=t.data.shape)
    apply_post_quant(model, 4)
    save_model(str(p), model, "", "")
    back = load_model(str(p))
    assert str(back.mode) == "quant4"
    for a, b in zip(model.parameters("all"), back.model.parameters("all")):
        np.testing.assert_array_equal(a.data, b.data)


def test_ensemble_roundtrip(tmp_path):
    p = tmp_path / "e.btae"
    base = _model("binary", seed=5)
    members = []
    for i in range(3):
        m = copy.deepcopy(base)
        g = np.random.default_rng(100 + i)
        for t in m.parameters("decoder"):
            t.data[...] = g.normal(size=t.data.shape)
        members.append(m)
    save_ensemble(str(p), members, "cfg", "curve")
    back = load_model(str(p))
    assert back.kind == "ensemble" and len(back.members) == 3
    for orig, got in zip(members, back.members):
        for a, b in zip(orig.parameters("decoder"), got.parameters("decoder")):
            np.testing.assert_array_equal(a.data, b.data)
    # shared encoder identical across members
    for a, b in zip(back.members[0].parameters("encoder"), back.members[1].parameters("encoder")):
        np.testing.assert_array_equal(a.data, b.data)


def test_ensemble_rejects_heterogeneous(tmp_path):
    a = _model("binary", seed=5)
    other_geom = ModelGeometry(K=10, M=1, F=2, filters=4, kernel=3, enc_layers=1, dec_layers=2)
    b = CodecModel(other_geom, QuantMode("binary"), seed=5)
    with pytest.raises(ValueError):
        save_ensemble(str(tmp_path / "e.btae"), [a, b], "", "")


def test_packed_roundtrip(tmp_path):
    p = tmp_path / "p.btae"
    model = _model("binary", seed=6)
    packed = model.freeze_for_edge()
    save_packed(str(p), model, packed, "cfg", "")
    back = load_model(str(p))
    assert back.kind == "packed"
    z = np.random.default_rng(3).normal(size=(7, 3, GEOM.K))
    np.testing.assert_array_equal(back.packed.decode_hard(z), packed.decode_hard(z))
    # encoder host reproduces the original encoder
    u = (np.random.default_rng(4).integers(0, 2, (4, 1, GEOM.K)) * 2 - 1).astype(float)
    np.testing.assert_array_equal(
        back.encoder_host.encode(u).data, model.encode(u).data
    )


def test_missing_required_section(tmp_path):
    p = tmp_path / "x.btae"
    save_model(str(p), _model(), "", "")
    sections = [(t, b) for t, b in read_container(str(p)).items() if t != b"ILVR"]
    write_container(str(p), sections)
    with pytest.raises(ContainerError, match="ILVR"):
        load_model(str(p))
