import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitturbo.quantize import (
    QuantMode,
    binarize,
    clip_latent,
    dequantize_codes,
    post_quantize,
    quantize_codes,
    sign_pm1,
    ste_backward,
    tern,
    ternarize,
    ternary_delta,
)
from bitturbo.tensor import Tape, Tensor, tsum, mul


# ---------------------------------------------------------------------------
# binarize: sign with sign(0) = +1
# ---------------------------------------------------------------------------

def test_binarize_branches():
    out = binarize(Tensor(np.array([0.7, -0.2, 0.0]))).data
    np.testing.assert_array_equal(out, [1.0, -1.0, 1.0])


def test_binarize_idempotent(rng):
    r = rng.normal(size=100)
    once = binarize(Tensor(r)).data
    twice = binarize(Tensor(once)).data
    np.testing.assert_array_equal(once, twice)


def test_binarize_range(rng):
    out = binarize(Tensor(rng.normal(size=1000))).data
    assert set(np.unique(out)) <= {-1.0, 1.0}


# ---------------------------------------------------------------------------
# straight-through estimator
# ---------------------------------------------------------------------------

def test_ste_mask_values():
    r = np.array([0.5, 1.5, -1.5, 1.0, -1.0])
    g = np.full(5, 2.0)
    out = ste_backward(g, r)
    np.testing.assert_array_equal(out, [2.0, 0.0, 0.0, 2.0, 2.0])  # boundary inclusive


def test_ste_shape_check():
    with pytest.raises(ValueError):
        ste_backward(np.zeros(3), np.zeros(4))


def test_binarize_backward_equals_mask_rule(rng):
    r = rng.normal(0, 1.2, size=(4, 5))
    scale = rng.normal(size=(4, 5))
    w = Tensor(r.copy(), requires_grad=True)
    with Tape() as tape:
        out = mul(binarize(w), Tensor(scale))
        tape.backward(tsum(out))
    np.testing.assert_array_equal(w.grad, ste_backward(scale, r))


def test_ternarize_backward_equals_mask_rule(rng):
    r = rng.normal(0, 1.2, size=(3, 7))
    scale = rng.normal(size=(3, 7))
    w = Tensor(r.copy(), requires_grad=True)
    with Tape() as tape:
        tape.backward(tsum(mul(ternarize(w), Tensor(scale))))
    np.testing.assert_array_equal(w.grad, ste_backward(scale, r))


# ---------------------------------------------------------------------------
# ternarize: delta = 0.7 * mean|r|
# ---------------------------------------------------------------------------

def test_ternarize_documented_example():
    r = np.array([0.9, -0.3, 0.05, -0.8])
    assert ternary_delta(r) == pytest.approx(0.35875)
    out = ternarize(Tensor(r)).data
    np.testing.assert_array_equal(out, [1.0, 0.0, 0.0, -1.0])


def test_ternarize_all_zero_warns():
    with pytest.warns(UserWarning):
        out = ternarize(Tensor(np.zeros(5))).data
    np.testing.assert_array_equal(out, np.zeros(5))


def test_ternarize_odd_symmetry(rng):
    r = rng.normal(size=64)
    a = ternarize(Tensor(r)).data
    b = ternarize(Tensor(-r)).data
    np.testing.assert_array_equal(a, -b)


def test_ternarize_range(rng):
    out = ternarize(Tensor(rng.normal(size=500))).data
    assert set(np.unique(out)) <= {-1.0, 0.0, 1.0}


def test_ternarize_boundary_maps_to_zero():
    # |r| == delta sits in the zero band
    r = np.array([1.0, -1.0, 10.0 / 7.0])  # mean|r| = 8/7*... pick direct check instead
    delta = ternary_delta(r)
    out = tern(r, delta)
    for v, o in zip(r, out):
        if abs(v) <= delta:
            assert o == 0.0


def test_ternarize_empty_rejected():
    with pytest.raises(ValueError):
        ternarize(Tensor(np.zeros(0)))


def test_sparsity_monotone_in_multiplier(rng):
    r = rng.normal(size=2000)
    base = float(np.mean(np.abs(r)))
    fractions = []
    for mult in [0.3, 0.5, 0.7, 0.9, 1.2]:
        out = tern(r, mult * base)
        fractions.append(float(np.mean(out == 0.0)))
    assert all(a <= b for a, b in zip(fractions, fractions[1:]))


# ---------------------------------------------------------------------------
# latent clipping
# ---------------------------------------------------------------------------

def test_clip_latent():
    w = Tensor(np.array([1.7, -2.0, 0.3]))
    clip_latent(w)
    np.testing.assert_array_equal(w.data, [1.0, -1.0, 0.3])
    clip_latent(w)
    np.testing.assert_array_equal(w.data, [1.0, -1.0, 0.3])


# ---------------------------------------------------------------------------
# post-training quantization
# ---------------------------------------------------------------------------

def nearest_level_oracle(w, q):
    """Exhaustive nearest-level search; ties to the smaller-magnitude level,
    dead-center ties positive."""
    s = np.max(np.abs(w))
    if s == 0:
        return np.zeros_like(w)
    levels = s * (-1 + 2 * np.arange(2 ** q) / (2 ** q - 1))
    out = np.empty_like(w)
    for i, v in enumerate(w.ravel()):
        d = np.abs(levels - v)
        best = np.min(d)
        cand = levels[np.isclose(d, best, rtol=0, atol=1e-12)]
        if len(cand) > 1:
            mags = np.abs(cand)
            cand = cand[np.isclose(mags, mags.min(), rtol=0, atol=1e-12)]
            pick = cand.max()  # equal magnitudes: positive wins
        else:
            pick = cand[0]
        out.ravel()[i] = pick
    return out


def test_post_quant_q1_example():
    w = np.array([0.3, -0.7])
    np.testing.assert_allclose(post_quantize(w, 1), [0.7, -0.7])


def test_post_quant_zero_is_positive_scale():
    w = np.array([0.0, 0.5])
    np.testing.assert_allclose(post_quantize(w, 1), [0.5, 0.5])


def test_post_quant_matches_oracle(rng):
    for q in (1, 2, 4, 8):
        w = rng.normal(size=200)
        np.testing.assert_allclose(post_quantize(w, q), nearest_level_oracle(w, q), atol=1e-12)


def test_post_quant_tie_toward_smaller_magnitude():
    # q=2: levels at +-s and +-s/3; midpoint 2s/3 must go to s/3
    s = 0.9
    w = np.array([s, 2 * s / 3, -2 * s / 3])
    got = post_quantize(w, 2)
    np.testing.assert_allclose(got, [s, s / 3, -s / 3])


@settings(max_examples=30, deadline=None)
@given(q=st.sampled_from([2, 4, 8]), seed=st.integers(0, 10_000))
def test_post_quant_error_bound(q, seed):
    w = np.random.default_rng(seed).normal(size=64)
    err = np.max(np.abs(w - post_quantize(w, q)))
    assert err <= np.max(np.abs(w)) / (2 ** q - 1) + 1e-15


def test_post_quant_fixed_point():
    w = 0.8 * (-1 + 2 * np.arange(16) / 15)  # exactly the q=4 codebook
    np.testing.assert_allclose(post_quantize(w, 4), w, atol=1e-15)


def test_quantize_codes_roundtrip(rng):
    w = rng.normal(size=(5, 7))
    for q in (1, 2, 4, 8):
        codes, scale = quantize_codes(w, q)
        assert codes.dtype == np.uint8 and codes.max() < 2 ** q
        np.testing.assert_allclose(dequantize_codes(codes, q, scale), post_quantize(w, q))


def test_post_quant_invalid_bits():
    with pytest.raises(ValueError):
        post_quantize(np.ones(3), 3)
    with pytest.raises(ValueError):
        quantize_codes(np.zeros(0), 4)


# ---------------------------------------------------------------------------
# QuantMode
# ---------------------------------------------------------------------------

def test_mode_parse_roundtrip():
    for text in ("real", "binary", "ternary", "quant4"):
        assert str(QuantMode.parse(text)) == text
    m = QuantMode.parse("quant8")
    assert m.q == 8 and m.quantizes_weights and not m.binary_activations
    assert QuantMode.parse("binary").binary_activations
    assert not QuantMode.parse("real").quantizes_weights


def test_mode_validation():
    with pytest.raises(ValueError):
        QuantMode("quant", 3)
    with pytest.raises(ValueError):
        QuantMode("binary", 4)
    with pytest.raises(ValueError):
        QuantMode("sorta")


def test_sign_pm1_zero():
    np.testing.assert_array_equal(sign_pm1(np.array([0.0, -0.0])), [1.0, 1.0])
