import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import bitturbo.bitkernel as bk
from bitturbo.bitkernel import (
    BitPlane,
    CostReport,
    LayerShape,
    PackedConvLayer,
    cost_report,
    float_conv1d_naive,
    freeze_conv_layer,
    pack_activations,
    pack_bits,
    packed_conv1d,
    packed_conv1d_counts,
    ternary_dot,
    unpack_activations,
    unpack_bits,
    xnor_dot,
)
from bitturbo.bitkernel.bitplane import pack_rows, unpack_rows, words_needed
from bitturbo.quantize import QuantMode

from conftest import naive_conv1d

BACKENDS = bk.available_backends()


# ---------------------------------------------------------------------------
# packing
# ---------------------------------------------------------------------------

def test_pack_bits_lsb_first():
    plane = pack_bits(np.array([1.0, 1.0, -1.0]))
    assert plane.n_valid == 3
    assert plane.words[0] == 0b011
    assert len(plane.words) == 1


def test_pack_bits_rejects_nonsign():
    with pytest.raises(ValueError):
        pack_bits(np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        pack_bits(np.array([1.0, 0.0]))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 10_000), seed=st.integers(0, 10**6))
def test_pack_unpack_roundtrip(n, seed):
    v = np.random.default_rng(seed).choice([-1.0, 1.0], size=n)
    assert np.array_equal(unpack_bits(pack_bits(v)), v)


def test_pack_exactly_one_word():
    v = np.random.default_rng(3).choice([-1.0, 1.0], size=64)
    plane = pack_bits(v)
    assert len(plane.words) == 1 and plane.n_valid == 64


def test_bitplane_rejects_dirty_padding():
    with pytest.raises(ValueError):
        BitPlane(np.array([0b1000], dtype=np.uint64), 3)


# ---------------------------------------------------------------------------
# dots
# ---------------------------------------------------------------------------

def test_xnor_dot_example():
    a = pack_bits(np.array([1.0, 1.0, -1.0]))
    w = pack_bits(np.array([1.0, -1.0, -1.0]))
    assert xnor_dot(a, w) == 1  # 1 - 1 + 1


def test_xnor_dot_self_and_complement(rng):
    v = rng.choice([-1.0, 1.0], size=130)
    p = pack_bits(v)
    q = pack_bits(-v)
    assert xnor_dot(p, p) == 130
    assert xnor_dot(p, q) == -130


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 300), seed=st.integers(0, 10**6))
def test_xnor_dot_matches_integer_dot(n, seed):
    g = np.random.default_rng(seed)
    a = g.choice([-1.0, 1.0], size=n)
    w = g.choice([-1.0, 1.0], size=n)
    assert xnor_dot(pack_bits(a), pack_bits(w)) == int(np.dot(a, w))


def test_xnor_dot_length_mismatch():
    with pytest.raises(ValueError):
        xnor_dot(pack_bits(np.ones(3)), pack_bits(np.ones(4)))


def _tern_planes(t: np.ndarray) -> tuple[BitPlane, BitPlane]:
    n = len(t)
    sign = BitPlane(pack_rows((t > 0).astype(np.uint64)), n)
    mask = BitPlane(pack_rows((t != 0).astype(np.uint64)), n)
    return sign, mask


def test_ternary_dot_example():
    t = np.array([1.0, 0.0, -1.0])
    a = pack_bits(np.array([1.0, 1.0, -1.0]))
    sign, mask = _tern_planes(t)
    assert ternary_dot(a, sign, mask) == 2  # 1 + 0 + 1


def test_ternary_dot_zero_mask_and_full_mask(rng):
    a_v = rng.choice([-1.0, 1.0], size=77)
    a = pack_bits(a_v)
    zeros = _tern_planes(np.zeros(77))
    assert ternary_dot(a, *zeros) == 0
    w_v = rng.choice([-1.0, 1.0], size=77)
    sign, mask = _tern_planes(w_v)
    assert ternary_dot(a, sign, mask) == xnor_dot(a, pack_bits(w_v))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 300), seed=st.integers(0, 10**6))
def test_ternary_dot_matches_integer_dot(n, seed):
    g = np.random.default_rng(seed)
    a = g.choice([-1.0, 1.0], size=n)
    t = g.choice([-1.0, 0.0, 1.0], size=n)
    sign, mask = _tern_planes(t)
    assert ternary_dot(pack_bits(a), sign, mask) == int(np.dot(a, t))


def test_ternary_dot_rejects_noncanonical():
    a = pack_bits(np.ones(2))
    sign = BitPlane(np.array([0b11], dtype=np.uint64), 2)
    mask = BitPlane(np.array([0b01], dtype=np.uint64), 2)
    with pytest.raises(ValueError):
        ternary_dot(a, sign, mask)


# ---------------------------------------------------------------------------
# packed conv vs float-sign oracle
# ---------------------------------------------------------------------------

def oracle_sign_conv(a, w, bias, gamma, beta, mean, var, eps=1e-5):
    """Float path: conv over +-1 floats with zero pads, batchnorm, sign."""
    y = naive_conv1d(a, w, bias)
    z = gamma[None, :, None] * (y - mean[None, :, None]) / np.sqrt(var[None, :, None] + eps)
    z = z + beta[None, :, None]
    return np.where(z >= 0.0, 1.0, -1.0)


def _random_case(g, ternary: bool):
    c_in = int(g.integers(1, 33))
    c_out = int(g.integers(1, 33))
    k = int(g.choice([1, 3, 5]))
    h = int(g.integers(1, 129))
    b = int(g.integers(1, 3))
    a = g.choice([-1.0, 1.0], size=(b, c_in, h))
    vals = [-1.0, 0.0, 1.0] if ternary else [-1.0, 1.0]
    w = g.choice(vals, size=(c_out, c_in, k))
    bias = g.choice(vals, size=c_out)
    gamma = g.normal(1.0, 0.7, c_out)
    beta = g.normal(0.0, 1.0, c_out)
    mean = g.normal(0.0, 3.0, c_out)
    var = g.uniform(0.3, 4.0, c_out)
    return a, w, bias, gamma, beta, mean, var, h


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("ternary", [False, True])
def test_packed_conv_matches_oracle(backend, ternary):
    g = np.random.default_rng(42 if ternary else 24)
    for trial in range(60):
        a, w, bias, gamma, beta, mean, var, h = _random_case(g, ternary)
        if trial % 9 == 0:
            gamma[int(g.integers(0, len(gamma)))] = 0.0  # constant channel
        layer = freeze_conv_layer(w, bias, gamma, beta, mean, var)
        got = unpack_activations(packed_conv1d(pack_activations(a), h, layer, backend=backend), h)
        want = oracle_sign_conv(a, w, bias, gamma, beta, mean, var)
        np.testing.assert_array_equal(got, want)


@pytest.mark.parametrize("backend", BACKENDS)
def test_packed_counts_match_oracle(backend):
    g = np.random.default_rng(5)
    for _ in range(30):
        a, w, bias, *_rest, h = _random_case(g, True)
        layer = freeze_conv_layer(w, bias, None, None, None, None)
        got = packed_conv1d_counts(pack_activations(a), h, layer, backend=backend)
        np.testing.assert_array_equal(got.astype(float), naive_conv1d(a, w, bias))


def test_identity_packed_layer():
    # 1x1 conv, +1 weight, threshold 0: output equals input
    layer = PackedConvLayer(
        1, 1, 1,
        np.array([[1]], dtype=np.uint64), np.array([[1]], dtype=np.uint64),
        np.zeros(1, dtype=np.int32), np.zeros(1, dtype=np.int32),
    )
    v = np.random.default_rng(0).choice([-1.0, 1.0], size=(1, 1, 100))
    out = unpack_activations(packed_conv1d(pack_activations(v), 100, layer), 100)
    np.testing.assert_array_equal(out, v)


def test_all_plus_one_interior_preactivation():
    c_in, k, h = 6, 5, 40
    a = np.ones((1, c_in, h))
    w = np.ones((1, c_in, k))
    layer = freeze_conv_layer(w, None, None, None, None, None)
    counts = packed_conv1d_counts(pack_activations(a), h, layer)
    pad = (k - 1) // 2
    np.testing.assert_array_equal(counts[0, 0, pad:h - pad], np.full(h - 2 * pad, c_in * k))


def test_freeze_rejects_non_ternary_weights():
    with pytest.raises(ValueError):
        freeze_conv_layer(np.full((1, 1, 1), 0.5), None, None, None, None, None)


def test_packed_layer_serialization_roundtrip(rng):
    g = np.random.default_rng(9)
    w = g.choice([-1.0, 0.0, 1.0], size=(5, 3, 5))
    bias = g.choice([-1.0, 1.0], size=5)
    layer = freeze_conv_layer(w, bias, np.ones(5), np.zeros(5), np.zeros(5), np.ones(5))
    blob = layer.to_bytes()
    back, used = PackedConvLayer.from_bytes(blob)
    assert used == len(blob)
    np.testing.assert_array_equal(back.weights_ternary(), layer.weights_ternary())
    np.testing.assert_array_equal(back.threshold, layer.threshold)
    np.testing.assert_array_equal(back.bias_code, layer.bias_code)
    assert layer.to_bytes() == back.to_bytes()


# ---------------------------------------------------------------------------
# cost arithmetic
# ---------------------------------------------------------------------------

def test_cost_single_layer_formula():
    layer = LayerShape(c_in=100, c_out=100, k=5, h_out=100, has_bias=False)
    rep = cost_report([layer], QuantMode("real"))
    assert rep.flops_real == 10_000_000  # 2 * 100*5*100*100
    rep_b = cost_report([layer], QuantMode("binary"))
    assert rep_b.bitops == 5_000_000


def test_cost_memory_of_26e5_params():
    layers = [LayerShape(1, 26, 1, 1, has_bias=False) for _ in range(100_000)]
    rep = cost_report(layers, QuantMode("real"))
    assert rep.params == 26 * 10**5
    assert rep.storage_mb == pytest.approx(20.84, rel=0.005)


def test_cost_saving_ratios():
    layers = [LayerShape(10, 10, 5, 20)]
    real = cost_report(layers, QuantMode("real"))
    binary = cost_report(layers, QuantMode("binary"))
    ternary = cost_report(layers, QuantMode("ternary"))
    q4 = cost_report(layers, QuantMode("quant", 4))
    bag = cost_report(layers, QuantMode("binary"), bag_size=4)
    assert real.memory_saving_x == 1.0 and real.speedup_x == 1.0
    assert binary.memory_saving_x == 64.0 and binary.speedup_x == 64.0
    assert ternary.memory_saving_x == 64.0 and ternary.speedup_x == 64.0
    assert q4.memory_saving_x == 16.0 and q4.speedup_x == 1.0
    assert bag.memory_saving_x == 16.0 and bag.speedup_x == 64.0
    assert bag.bitops == 4 * binary.bitops
    assert bag.storage_bits == 4 * binary.storage_bits


def test_cost_report_consistency():
    layers = [LayerShape(7, 16, 5, 100), LayerShape(16, 16, 5, 100)]
    rep = cost_report(layers, QuantMode("binary"))
    assert rep.flops_real == 2 * rep.bitops
    assert rep.params == sum(l.params for l in layers)


# ---------------------------------------------------------------------------
# float reference kernel
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("backend", BACKENDS)
def test_float_naive_matches_oracle(backend, rng):
    for _ in range(8):
        b, ci, co = (int(v) for v in rng.integers(1, 4, 3))
        k = int(rng.choice([1, 3, 5]))
        h = int(rng.integers(1, 20))
        x = rng.normal(size=(b, ci, h))
        w = rng.normal(size=(co, ci, k))
        bias = rng.normal(size=co)
        got = float_conv1d_naive(x, w, bias, backend=backend)
        np.testing.assert_allclose(got, naive_conv1d(x, w, bias), rtol=1e-12, atol=1e-12)


def test_backends_agree_bitwise(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled extension unavailable")
    g = np.random.default_rng(77)
    for ternary in (False, True):
        a, w, bias, gamma, beta, mean, var, h = _random_case(g, ternary)
        layer = freeze_conv_layer(w, bias, gamma, beta, mean, var)
        xw = pack_activations(a)
        outs = [packed_conv1d(xw, h, layer, backend=be) for be in BACKENDS]
        np.testing.assert_array_equal(outs[0], outs[1])


def test_rows_pack_unpack_words():
    bits = np.random.default_rng(1).integers(0, 2, size=(3, 130)).astype(np.uint64)
    words = pack_rows(bits)
    assert words.shape == (3, words_needed(130))
    np.testing.assert_array_equal(unpack_rows(words, 130), bits)
