import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import numeric_grad, rel_err
from nsrd.neural import layers as L


def direct_conv(x, w, b):
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((B, O, H, W))
    for i in range(H):
        for j in range(W):
            out[:, :, i, j] = np.einsum("bckl,ockl->bo", xp[:, :, i:i + k, j:j + k], w) + b
    return out


@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv_matches_direct_loop(rng, k):
    x = rng.standard_normal((2, 3, 6, 7))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    out, _ = L.conv2d_forward(x, w, b)
    assert np.allclose(out, direct_conv(x, w, b), atol=1e-12)


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1.0
    assert np.array_equal(L.conv2d_forward(x, w, np.zeros(2))[0], x)


def test_conv_rejects_bad_shapes(rng):
    with pytest.raises(ValueError):
        L.conv2d_forward(rng.standard_normal((1, 2, 4, 4)), np.zeros((3, 4, 3, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        L.conv2d_forward(rng.standard_normal((1, 2, 4, 4)), np.zeros((3, 2, 2, 2)), np.zeros(3))


def _check(forward, backward, inputs, tol, rng):
    """Gradient of sum(R * forward(*inputs)) against central differences, for every input."""
    out = forward(*inputs)
    R = rng.standard_normal(out.shape)
    analytic = backward(R)
    for x, g in zip(inputs, analytic):
        num = numeric_grad(lambda: float(np.sum(R * forward(*inputs))), x)
        assert rel_err(g, num) <= tol


STATELESS = 1e-5


@pytest.mark.parametrize("k", [1, 3])
def test_conv_gradients(rng, k):
    x, w, b = rng.standard_normal((2, 3, 5, 4)), rng.standard_normal((4, 3, k, k)), rng.standard_normal(4)
    cache = {}

    def fwd(x, w, b):
        out, cache["c"] = L.conv2d_forward(x, w, b)
        return out

    _check(fwd, lambda d: L.conv2d_backward(d, cache["c"]), [x, w, b], STATELESS, rng)


def test_conv_act_gradients(rng):
    x, w, b = rng.standard_normal((1, 3, 5, 5)), rng.standard_normal((2, 3, 3, 3)), rng.standard_normal(2)
    cache = {}

    def fwd(x, w, b):
        out, cache["c"] = L.conv_act_forward(x, w, b)
        return out

    _check(fwd, lambda d: L.conv_act_backward(d, cache["c"]), [x, w, b], STATELESS, rng)


def test_gated_conv_gradients(rng):
    args = [rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 3, 3, 3)), rng.standard_normal(2),
            rng.standard_normal((2, 3, 3, 3)), rng.standard_normal(2)]
    cache = {}

    def fwd(*a):
        out, cache["c"] = L.gated_conv_forward(*a)
        return out

    _check(fwd, lambda d: L.gated_conv_backward(d, cache["c"]), args, STATELESS, rng)


def test_gated_conv_rejects_mismatch(rng):
    x = rng.standard_normal((1, 3, 4, 4))
    with pytest.raises(ValueError):
        L.gated_conv_forward(x, np.zeros((2, 3, 3, 3)), np.zeros(2), np.zeros((3, 3, 3, 3)), np.zeros(3))


def _rcab_params(rng, c=8, red=2):
    return {"w1": rng.standard_normal((c, c, 3, 3)) * 0.3, "b1": rng.standard_normal(c) * 0.1,
            "w2": rng.standard_normal((c, c, 3, 3)) * 0.3, "b2": rng.standard_normal(c) * 0.1,
            "ca_w1": rng.standard_normal((red, c, 1, 1)), "ca_b1": rng.standard_normal(red) * 0.1,
            "ca_w2": rng.standard_normal((c, red, 1, 1)), "ca_b2": rng.standard_normal(c) * 0.1}


def test_rcab_gradients(rng):
    p = _rcab_params(rng)
    keys = list(L.RCAB_KEYS)
    x = rng.standard_normal((2, 8, 4, 4))
    cache = {}

    def fwd(x, *vals):
        out, cache["c"] = L.rcab_forward(x, dict(zip(keys, vals)))
        return out

    def bwd(d):
        dx, grads = L.rcab_backward(d, cache["c"])
        return [dx] + [grads[k] for k in keys]

    _check(fwd, bwd, [x] + [p[k] for k in keys], STATELESS, rng)


def test_rcab_zero_branch_is_identity(rng):
    p = _rcab_params(rng)
    p["w2"][:] = 0
    p["b2"][:] = 0
    x = rng.standard_normal((1, 8, 4, 4))
    assert np.array_equal(L.rcab_forward(x, p)[0], x)


def test_channel_attention_range(rng):
    att = L.channel_attention(rng.standard_normal((2, 8, 4, 4)) * 10, _rcab_params(rng))
    assert att.shape == (2, 8, 1, 1)
    assert np.all((att > 0) & (att < 1))


def test_maxpool_and_gradient(rng):
    x = rng.standard_normal((2, 3, 4, 6))
    out, cache = L.maxpool2_forward(x)
    expect = x.reshape(2, 3, 2, 2, 3, 2).max(axis=(3, 5))
    assert np.array_equal(out, expect)
    _check(lambda x: L.maxpool2_forward(x)[0], lambda d: [L.maxpool2_backward(d, cache)], [x], STATELESS, rng)
    with pytest.raises(ValueError):
        L.maxpool2_forward(np.zeros((1, 1, 3, 4)))


def test_up2_matches_general_bilinear(rng):
    x = rng.standard_normal((1, 2, 3, 5))
    assert np.allclose(L.bilinear_up2(x), L.bilinear_up(x, 2), atol=1e-14)
    assert np.array_equal(L.bilinear_up2(np.full((1, 1, 2, 2), 3.0)), np.full((1, 1, 4, 4), 3.0))


def test_up2_gradient(rng):
    x = rng.standard_normal((2, 2, 3, 4))
    _check(L.bilinear_up2, lambda d: [L.bilinear_up2_backward(d)], [x], STATELESS, rng)


def test_bilinear_up_examples():
    x = np.array([[[[0.0, 1.0]]]])
    # half-pixel centres: output x-coords 0.125, 0.375, ... map to 0, 0, 0.125, 0.375, ...
    out = L.bilinear_up(x, 4)[0, 0, 0]
    assert np.allclose(out, [0, 0, 0.125, 0.375, 0.625, 0.875, 1, 1])


def test_pixel_shuffle_layout():
    x = np.arange(8, dtype=np.float32).reshape(1, 8, 1, 1)
    out = L.pixel_shuffle(x, 2)
    assert out.shape == (1, 2, 2, 2)
    assert out[0, 0].tolist() == [[0, 1], [2, 3]]
    assert out[0, 1].tolist() == [[4, 5], [6, 7]]


@given(arrays(np.float32, (2, 3, 8, 12), elements=st.floats(allow_nan=False, width=32)), st.sampled_from([1, 2, 4]))
def test_shuffle_roundtrip_bit_exact(x, s):
    assert L.pixel_shuffle(L.pixel_unshuffle(x, s), s).tobytes() == np.ascontiguousarray(x).tobytes()
    y = L.pixel_unshuffle(x, s)
    assert L.pixel_unshuffle(L.pixel_shuffle(y, s), s).tobytes() == np.ascontiguousarray(y).tobytes()


def test_shuffle_rejects_bad_sizes():
    with pytest.raises(ValueError):
        L.pixel_shuffle(np.zeros((1, 6, 2, 2)), 2)
    with pytest.raises(ValueError):
        L.pixel_unshuffle(np.zeros((1, 1, 6, 5)), 2)


def test_sigmoid_is_stable():
    x = np.array([-1000.0, -30.0, 0.0, 30.0, 1000.0])
    with np.errstate(over="raise"):
        y = L.sigmoid(x)
    assert np.all(np.isfinite(y))
    assert y[2] == 0.5 and y[0] == 0.0 and y[-1] == 1.0


def _lstm_args(rng, cin=3, hid=2, hw=(4, 4)):
    return (rng.standard_normal((1, cin) + hw), rng.standard_normal((1, hid) + hw),
            rng.standard_normal((1, hid) + hw), rng.standard_normal((4 * hid, cin + hid, 3, 3)) * 0.5,
            rng.standard_normal(4 * hid) * 0.5)


def test_convlstm_gate_equations(rng):
    x, h, c, w, b = _lstm_args(rng)
    h2, c2, _ = L.convlstm_forward(x, h, c, w, b)
    z = direct_conv(np.concatenate([x, h], 1), w, b)
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, o, g = sig(z[:, 0:2]), sig(z[:, 2:4]), sig(z[:, 4:6]), np.tanh(z[:, 6:8])
    assert np.allclose(c2, f * c + i * g, atol=1e-12)
    assert np.allclose(h2, o * np.tanh(f * c + i * g), atol=1e-12)


def test_convlstm_step_gradients(rng):
    args = list(_lstm_args(rng))
    cache = {}
    R1 = rng.standard_normal(args[1].shape)
    R2 = rng.standard_normal(args[1].shape)

    def loss():
        h2, c2, cache["c"] = L.convlstm_forward(*args)
        return float(np.sum(R1 * h2) + np.sum(R2 * c2))

    loss()
    dx, dh, dc, dw, db = L.convlstm_backward(R1, R2, cache["c"])
    for x, g in zip(args, (dx, dh, dc, dw, db)):
        assert rel_err(g, numeric_grad(loss, x)) <= STATELESS


def test_convlstm_unrolled_gradients(rng):
    T = 4
    xs = [rng.standard_normal((1, 3, 4, 4)) for _ in range(T)]
    _, h0, c0, w, b = _lstm_args(rng)
    Rs = [rng.standard_normal((1, 2, 4, 4)) for _ in range(T)]

    def run():
        h, c, caches, total = h0, c0, [], 0.0
        for x, R in zip(xs, Rs):
            h, c, cc = L.convlstm_forward(x, h, c, w, b)
            caches.append(cc)
            total += float(np.sum(R * h))
        return total, caches

    _, caches = run()
    dw, db = np.zeros_like(w), np.zeros_like(b)
    dh_next, dc_next = np.zeros_like(h0), np.zeros_like(c0)
    dxs = [None] * T
    for t in reversed(range(T)):
        dxs[t], dh_next, dc_next, gw, gb = L.convlstm_backward(Rs[t] + dh_next, dc_next, caches[t])
        dw += gw
        db += gb
    f = lambda: run()[0]
    for x, g in [(w, dw), (b, db), (h0, dh_next), (c0, dc_next), (xs[0], dxs[0])]:
        assert rel_err(g, numeric_grad(f, x)) <= 1e-4


def test_convlstm_rejects_bad_state(rng):
    x, h, c, w, b = _lstm_args(rng)
    with pytest.raises(ValueError):
        L.convlstm_forward(x, h[:, :1], c, w, b)
    with pytest.raises(ValueError):
        L.convlstm_forward(x, h, c, w[:4], b[:4])


def test_float32_inputs_stay_float32(rng):
    x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    out, _ = L.conv2d_forward(x, np.ones((2, 2, 3, 3), np.float32), np.zeros(2, np.float32))
    assert out.dtype == np.float32
    assert L.bilinear_up2(x).dtype == np.float32
