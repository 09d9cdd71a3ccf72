import numpy as np
import pytest

from bitturbo.tensor import Tape, Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def numeric_grad(fn, arrays: list[np.ndarray], idx: int, delta: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued fn wrt arrays[idx]."""
    base = [a.copy() for a in arrays]
    g = np.zeros_like(base[idx])
    flat = g.ravel()
    for i in range(flat.size):
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[idx].ravel()[i] += delta
        minus[idx].ravel()[i] -= delta
        flat[i] = (fn(plus) - fn(minus)) / (2 * delta)
    return g


def analytic_grads(fn_t, arrays: list[np.ndarray]) -> list[np.ndarray]:
    """Run fn_t over Tensors on a tape; return gradients per input."""
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = fn_t(ts)
        tape.backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def check_gradients(fn_t, fn_np, arrays, rtol=1e-4, atol=1e-7):
    """Compare tape gradients against central finite differences."""
    got = analytic_grads(fn_t, arrays)
    for i in range(len(arrays)):
        want = numeric_grad(fn_np, arrays, i)
        np.testing.assert_allclose(got[i], want, rtol=rtol, atol=atol)


def naive_conv1d(x: np.ndarray, w: np.ndarray, bias=None) -> np.ndarray:
    """Direct same-padding cross-correlation; the convolution oracle."""
    b, c_in, h = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) // 2
    out = np.zeros((b, c_out, h))
    for s in range(b):
        for co in range(c_out):
            for p in range(h):
                acc = 0.0 if bias is None else bias[co]
                for ci in range(c_in):
                    for j in range(k):
                        pos = p - pad + j
                        if 0 <= pos < h:
                            acc += w[co, ci, j] * x[s, ci, pos]
                out[s, co, p] = acc
    return out
