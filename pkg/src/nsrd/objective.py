"""Training losses (smooth L1, SSIM, masked temporal term) and evaluation metrics.

Losses accept arrays shaped (..., C, H, W) and return ``(value, gradient)`` with the gradient
taken w.r.t. the first image argument unless stated otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import ImagePlane
from .motionfield import backward_warp


@dataclass(frozen=True)
class LossWeights:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0 or (self.w1 == self.w2 == self.w3 == 0):
            raise ValueError("loss weights must be nonnegative and not all zero")


@dataclass(frozen=True)
class SsimParams:
    window: int = 11
    sigma: float = 1.5
    data_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03

    @property
    def c1(self):
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self):
        return (self.k2 * self.data_range) ** 2

    def kernel(self):
        x = np.arange(self.window) - (self.window - 1) / 2
        g = np.exp(-x * x / (2 * self.sigma ** 2))
        return g / g.sum()


def _arr(x):
    return x.data if isinstance(x, ImagePlane) else np.asarray(x)


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def smooth_l1(a, b):
    """Mean of 0.5 d^2 (|d| < 1) or |d| - 0.5, d = a - b. Returns (value, d/da)."""
    a, b = _arr(a), _arr(b)
    _same_shape(a, b)
    d = a - b
    ad = np.abs(d)
    value = np.where(ad < 1.0, 0.5 * d * d, ad - 0.5).mean()
    grad = np.where(ad < 1.0, d, np.sign(d)) / d.size
    return float(value), grad


# ---------------------------------------------------------------------------
# SSIM

def _filter_valid(x, g):
    """Separable valid correlation over the last two axes."""
    k = g.size
    x = sliding_window_view(x, k, axis=-1) @ g
    return sliding_window_view(x, k, axis=-2) @ g


def _filter_adjoint(d, g):
    """Adjoint of :func:`_filter_valid` (full correlation with the flipped kernel)."""
    k = g.size
    pad = [(0, 0)] * (d.ndim - 2) + [(k - 1, k - 1), (k - 1, k - 1)]
    return _filter_valid(np.pad(d, pad), g[::-1])


def _ssim_terms(a, b, params):
    g = params.kernel()
    ma, mb = _filter_valid(a, g), _filter_valid(b, g)
    eaa, ebb, eab = _filter_valid(a * a, g), _filter_valid(b * b, g), _filter_valid(a * b, g)
    a1 = 2 * ma * mb + params.c1
    a2 = 2 * (eab - ma * mb) + params.c2
    b1 = ma * ma + mb * mb + params.c1
    b2 = (eaa - ma * ma) + (ebb - mb * mb) + params.c2
    return g, ma, mb, a1, a2, b1, b2


def ssim(a, b, params: SsimParams = SsimParams(), luminance=True):
    """Windowed SSIM. Returns (mean, map, d mean / d a).

    With ``luminance`` the statistic is computed once on the channel mean (loss form);
    otherwise per channel and averaged (reporting form).
    """
    a, b = _arr(a), _arr(b)
    _same_shape(a, b)
    if a.shape[-1] < params.window or a.shape[-2] < params.window:
        raise ValueError(f"image {a.shape[-2:]} smaller than the {params.window}px SSIM window")
    if luminance:
        la, lb = a.mean(axis=-3), b.mean(axis=-3)
    else:
        la, lb = a, b
    g, ma, mb, a1, a2, b1, b2 = _ssim_terms(la, lb, params)
    smap = a1 * a2 / (b1 * b2)
    value = smap.mean()
    n = smap.size
    ds_dma = smap * (2 * mb / a1 - 2 * mb / a2 - 2 * ma / b1 + 2 * ma / b2) / n
    ds_deab = smap * 2 / a2 / n
    ds_deaa = -smap / b2 / n
    grad = (_filter_adjoint(ds_dma, g) + 2 * la * _filter_adjoint(ds_deaa, g)
            + lb * _filter_adjoint(ds_deab, g))
    if luminance:
        grad = np.repeat(np.expand_dims(grad / a.shape[-3], -3), a.shape[-3], axis=-3)
    return float(value), smap, grad


def ssim_rgb(a, b, params: SsimParams = SsimParams()) -> float:
    return ssim(a, b, params, luminance=False)[0]


def temporal_loss(prev_warped, cur, hr_mask):
    """Smooth L1 between the previous (warped) and current outputs outside the motion mask.

    Returns (value, d/dcur); the previous output is treated as a constant.
    """
    p, c, m = _arr(prev_warped), _arr(cur), _arr(hr_mask)
    _same_shape(p, c)
    keep = 1.0 - m
    if keep.shape[-3] == 1 and c.shape[-3] != 1:
        keep = np.broadcast_to(keep, c.shape)
    if keep.shape != c.shape:
        raise ValueError(f"mask {m.shape} does not match images {c.shape}")
    value, g = smooth_l1(keep * c, keep * p)
    return value, g * keep


@dataclass
class LossParts:
    total: float
    l1: float
    ssim: float
    temporal: float
    grad: np.ndarray = field(repr=False)


def total_loss(prev_warped, cur, gt, hr_mask, weights: LossWeights = LossWeights(),
               ssim_params: SsimParams = SsimParams(), temporal=True) -> LossParts:
    """w1 smoothL1(cur, gt) + w2 (1 - SSIM(cur, gt)) + w3 temporal(prev, cur); grad w.r.t. cur."""
    cur, gt = _arr(cur), _arr(gt)
    l1, g1 = smooth_l1(cur, gt)
    s, _, gs = ssim(cur, gt, ssim_params)
    total = weights.w1 * l1 + weights.w2 * (1.0 - s)
    grad = weights.w1 * g1 - weights.w2 * gs
    lt = 0.0
    if temporal and prev_warped is not None and weights.w3:
        lt, gt_ = temporal_loss(prev_warped, cur, hr_mask)
        total += weights.w3 * lt
        grad = grad + weights.w3 * gt_
    return LossParts(float(total), l1, s, lt, grad)


# ---------------------------------------------------------------------------
# metrics

def psnr(a, b, peak=1.0) -> float:
    a, b = _arr(a).astype(np.float64), _arr(b).astype(np.float64)
    _same_shape(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


@dataclass
class WarpingError:
    value: float
    per_frame: list
    skipped: int = 0


def warping_error(outputs, tmvs, masks, scale=1000.0) -> WarpingError:
    """Mean over frames t >= 1 of the masked MSE between warp(out[t-1], tmv[t]) and out[t].

    ``tmvs[t]`` and ``masks[t]`` belong to frame t (entry 0 is ignored). Frames without any
    valid pixel are skipped and counted.
    """
    if len(outputs) < 2:
        raise ValueError("warping error needs at least two frames")
    per_frame, skipped = [], 0
    for t in range(1, len(outputs)):
        cur = _arr(outputs[t]).astype(np.float64)
        warped = backward_warp(_arr(outputs[t - 1]), tmvs[t]).data.astype(np.float64)
        valid = _arr(masks[t])[0] == 0 if masks is not None else np.ones(cur.shape[1:], bool)
        if not np.any(valid):
            skipped += 1
            continue
        per_frame.append(float(((warped - cur) ** 2)[:, valid].mean() * scale))
    value = float(np.mean(per_frame)) if per_frame else float("nan")
    return WarpingError(value, per_frame, skipped)


def epi_extract(outputs, row) -> ImagePlane:
    """Stack scanline ``row`` of every frame into a (C, frames, width) plane."""
    frames = [_arr(o) for o in outputs]
    h = frames[0].shape[1]
    if not 0 <= row < h:
        raise ValueError(f"row {row} outside image height {h}")
    return ImagePlane(np.stack([f[:, row, :] for f in frames], axis=1))
