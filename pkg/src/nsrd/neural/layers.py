"""Layer zoo with explicit adjoints. Tensors are numpy arrays laid out (B, C, H, W).

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes the upstream
gradient and the cache. Layers run in the dtype of their input, so feeding float64 gives
a float64 pipeline for gradient checking.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAKY_SLOPE = 0.1


def _check(x, w):
    if x.ndim != 4:
        raise ValueError(f"expected (B, C, H, W), got shape {x.shape}")
    if w.shape[1] != x.shape[1]:
        raise ValueError(f"conv expects {w.shape[1]} input channels, got {x.shape[1]}")
    if w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise ValueError(f"kernel must be square and odd, got {w.shape[2:]}")


# ---------------------------------------------------------------------------
# convolution

def conv2d_forward(x, weight, bias):
    """'Same' cross-correlation, stride 1, zero padding. weight: (O, C, k, k)."""
    _check(x, weight)
    B, C, H, W = x.shape
    O, _, k, _ = weight.shape
    wmat = weight.reshape(O, C * k * k).astype(x.dtype, copy=False)
    b = bias.astype(x.dtype, copy=False)
    if k == 1:
        cols = x.reshape(B, C, H * W)
    else:
        p = k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))          # B, C, H, W, k, k
        cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(B, C * k * k, H * W)
    out = np.matmul(wmat, cols) + b[None, :, None]
    return out.reshape(B, O, H, W), (cols, x.shape, weight)


def conv2d_backward(dout, cache):
    """Returns (dx, dweight, dbias)."""
    cols, xshape, weight = cache
    B, C, H, W = xshape
    O, _, k, _ = weight.shape
    d2 = dout.reshape(B, O, H * W)
    dw = np.einsum("bol,bcl->oc", d2, cols, optimize=True).reshape(weight.shape)
    db = d2.sum(axis=(0, 2))
    wmat = weight.reshape(O, C * k * k).astype(dout.dtype, copy=False)
    dcols = np.matmul(wmat.T, d2)
    if k == 1:
        return dcols.reshape(xshape), dw, db
    p = k // 2
    dcols = dcols.reshape(B, C, k, k, H, W)
    dxp = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + H, j:j + W] += dcols[:, :, i, j]
    return dxp[:, :, p:p + H, p:p + W], dw, db


# ---------------------------------------------------------------------------
# pointwise activations

def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, x * slope)


def leaky_relu_backward(dout, x, slope=LEAKY_SLOPE):
    return np.where(x > 0, dout, dout * slope)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return np.where(x > 0, dout, 0)


def sigmoid(x):
    # split by sign keeps exp() from overflowing
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# composite blocks

def conv_act_forward(x, w, b):
    z, cc = conv2d_forward(x, w, b)
    return leaky_relu(z), (cc, z)


def conv_act_backward(dout, cache):
    cc, z = cache
    return conv2d_backward(leaky_relu_backward(dout, z), cc)


def gated_conv_forward(x, wg, bg, wf, bf):
    """out = LeakyReLU(conv(Wf, x)) * sigmoid(conv(Wg, x))."""
    if wg.shape[0] != wf.shape[0]:
        raise ValueError("gate and feature convolutions must have equal output channels")
    gate, cg = conv2d_forward(x, wg, bg)
    feat, cf = conv2d_forward(x, wf, bf)
    s = sigmoid(gate)
    phi = leaky_relu(feat)
    return phi * s, (cg, cf, s, phi, feat)


def gated_conv_backward(dout, cache):
    """Returns (dx, dwg, dbg, dwf, dbf)."""
    cg, cf, s, phi, feat = cache
    dgate = dout * phi * s * (1.0 - s)
    dfeat = leaky_relu_backward(dout * s, feat)
    dx1, dwg, dbg = conv2d_backward(dgate, cg)
    dx2, dwf, dbf = conv2d_backward(dfeat, cf)
    return dx1 + dx2, dwg, dbg, dwf, dbf


def convlstm_forward(x, h, c, w, b):
    """One ConvLSTM step; gates i, f, o, g come from conv([x; h]) split four ways."""
    if h.shape != c.shape or h.shape[2:] != x.shape[2:]:
        raise ValueError(f"state {h.shape}/{c.shape} does not match input {x.shape}")
    hid = h.shape[1]
    if w.shape[0] != 4 * hid:
        raise ValueError(f"lstm conv must output {4 * hid} channels, has {w.shape[0]}")
    z, cc = conv2d_forward(np.concatenate([x, h], axis=1), w, b)
    i = sigmoid(z[:, :hid])
    f = sigmoid(z[:, hid:2 * hid])
    o = sigmoid(z[:, 2 * hid:3 * hid])
    g = np.tanh(z[:, 3 * hid:])
    c2 = f * c + i * g
    tc = np.tanh(c2)
    h2 = o * tc
    return h2, c2, (cc, i, f, o, g, c, tc, x.shape[1])


def convlstm_backward(dh2, dc2, cache):
    """Returns (dx, dh, dc, dw, db)."""
    cc, i, f, o, g, c, tc, cin = cache
    dc_total = dc2 + dh2 * o * (1.0 - tc * tc)
    do = dh2 * tc
    di = dc_total * g
    df = dc_total * c
    dg = dc_total * i
    dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=1)
    dxh, dw, db = conv2d_backward(dz, cc)
    return dxh[:, :cin], dxh[:, cin:], dc_total * f, dw, db


RCAB_KEYS = ("w1", "b1", "w2", "b2", "ca_w1", "ca_b1", "ca_w2", "ca_b2")


def rcab_forward(x, p):
    """y = x + CA(conv(relu(conv(x)))), CA: avg-pool -> 1x1 -> relu -> 1x1 -> sigmoid scale."""
    z1, c1 = conv2d_forward(x, p["w1"], p["b1"])
    a1 = relu(z1)
    r, c2 = conv2d_forward(a1, p["w2"], p["b2"])
    if r.shape != x.shape:
        raise ValueError("RCAB must preserve the channel count")
    pooled = r.mean(axis=(2, 3), keepdims=True)
    q, c3 = conv2d_forward(pooled, p["ca_w1"], p["ca_b1"])
    qa = relu(q)
    u, c4 = conv2d_forward(qa, p["ca_w2"], p["ca_b2"])
    scale = sigmoid(u)
    return x + r * scale, (c1, z1, c2, r, c3, q, c4, scale)


def rcab_backward(dy, cache):
    """Returns (dx, grads dict)."""
    c1, z1, c2, r, c3, q, c4, scale = cache
    dr = dy * scale
    dscale = (dy * r).sum(axis=(2, 3), keepdims=True)
    du = dscale * scale * (1 - scale)
    dqa, dcaw2, dcab2 = conv2d_backward(du, c4)
    dq = relu_backward(dqa, q)
    dpooled, dcaw1, dcab1 = conv2d_backward(dq, c3)
    hw = r.shape[2] * r.shape[3]
    dr = dr + np.broadcast_to(dpooled / hw, r.shape)
    da1, dw2, db2 = conv2d_backward(dr, c2)
    dx1, dw1, db1 = conv2d_backward(relu_backward(da1, z1), c1)
    grads = {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2,
             "ca_w1": dcaw1, "ca_b1": dcab1, "ca_w2": dcaw2, "ca_b2": dcab2}
    return dy + dx1, grads


def channel_attention(x, p):
    """Per-channel attention weights in (0, 1), shape (B, C, 1, 1); for inspection."""
    pooled = x.mean(axis=(2, 3), keepdims=True)
    q, _ = conv2d_forward(pooled, p["ca_w1"], p["ca_b1"])
    u, _ = conv2d_forward(relu(q), p["ca_w2"], p["ca_b2"])
    return sigmoid(u)


# ---------------------------------------------------------------------------
# resampling

def pixel_shuffle(x, s):
    """(B, C*s*s, H, W) -> (B, C, H*s, W*s)."""
    B, Cs, H, W = x.shape
    if Cs % (s * s):
        raise ValueError(f"{Cs} channels not divisible by {s * s}")
    C = Cs // (s * s)
    return x.reshape(B, C, s, s, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, C, H * s, W * s)


def pixel_unshuffle(x, s):
    """(B, C, H*s, W*s) -> (B, C*s*s, H, W); exact inverse of :func:`pixel_shuffle`."""
    B, C, Hs, Ws = x.shape
    if Hs % s or Ws % s:
        raise ValueError(f"{Hs}x{Ws} not divisible by {s}")
    H, W = Hs // s, Ws // s
    return x.reshape(B, C, H, s, W, s).transpose(0, 1, 3, 5, 2, 4).reshape(B, C * s * s, H, W)


def maxpool2_forward(x):
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"max-pool needs even dims, got {H}x{W}")
    blocks = x.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // 2, W // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2_backward(dout, cache):
    idx, shape = cache
    B, C, H, W = shape
    blocks = np.zeros((B, C, H // 2, W // 2, 4), dtype=dout.dtype)
    np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
    return blocks.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def _up2_axis(x, axis):
    n = x.shape[axis]
    lo = np.take(x, np.maximum(np.arange(n) - 1, 0), axis=axis)
    hi = np.take(x, np.minimum(np.arange(n) + 1, n - 1), axis=axis)
    even = 0.75 * x + 0.25 * lo
    odd = 0.75 * x + 0.25 * hi
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(x.shape)
    shape[axis] = 2 * n
    return out.reshape(shape)


def _up2_axis_backward(d, axis):
    n = d.shape[axis] // 2
    shape = list(d.shape)
    shape[axis:axis + 1] = [n, 2]
    d = d.reshape(shape)
    de = np.take(d, 0, axis=axis + 1)
    do = np.take(d, 1, axis=axis + 1)
    dx = 0.75 * (de + do)
    sl = [slice(None)] * dx.ndim
    # even output 2i reads i-1 (clamped), odd output 2i+1 reads i+1 (clamped)
    sl[axis] = slice(0, n - 1)
    src = [slice(None)] * dx.ndim
    src[axis] = slice(1, n)
    dx[tuple(sl)] += 0.25 * de[tuple(src)]
    dx[tuple(src)] += 0.25 * do[tuple(sl)]
    first = [slice(None)] * dx.ndim
    first[axis] = slice(0, 1)
    last = [slice(None)] * dx.ndim
    last[axis] = slice(n - 1, n)
    dx[tuple(first)] += 0.25 * de[tuple(first)]
    dx[tuple(last)] += 0.25 * do[tuple(last)]
    return dx


def bilinear_up2(x):
    """x2 bilinear upsampling, half-pixel centres (align_corners=False), edge-clamped."""
    return _up2_axis(_up2_axis(x, 3), 2)


def bilinear_up2_backward(dout):
    return _up2_axis_backward(_up2_axis_backward(dout, 2), 3)


def bilinear_up(x, s):
    """Integer-factor bilinear upsampling of a (B, C, H, W) array, no gradient."""
    B, C, H, W = x.shape

    def weights(n):
        src = np.clip((np.arange(n * s) + 0.5) / s - 0.5, 0, n - 1)
        i0 = np.minimum(np.floor(src).astype(int), n - 1)
        i1 = np.minimum(i0 + 1, n - 1)
        f = (src - i0).astype(x.dtype)
        return i0, i1, f

    y0, y1, fy = weights(H)
    x0, x1, fx = weights(W)
    rows = x[:, :, y0] * (1 - fy)[:, None] + x[:, :, y1] * fy[:, None]
    return rows[..., x0] * (1 - fx) + rows[..., x1] * fx
