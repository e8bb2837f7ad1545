"""Traditional and dual motion vectors, motion masks, composition and backward warping.

Convention: a motion field stores, per current-frame pixel p, the offset mv(p) such that
p + mv(p) is the matching position in the previous frame. Pixel centres sit at +0.5.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import ImagePlane
from .renderer import cast, surface_correspondence, to_world

DEFAULT_TAU = 0.1
MV_SNAP = 1e-9  # reprojection round-off below this is flushed to exact zero


@dataclass(frozen=True)
class MotionField:
    mv: ImagePlane
    kind: str = "TMV"

    @property
    def data(self):
        return self.mv.data


@dataclass(frozen=True)
class MotionMask:
    mask: ImagePlane
    tau: float = DEFAULT_TAU

    @property
    def data(self):
        return self.mask.data


@dataclass(frozen=True)
class DualMotion:
    tmv: MotionField
    dmv: MotionField
    occluded: np.ndarray  # (H, W) hit now, hidden in the previous frame
    fallbacks: int = 0


def _arr(x):
    return x.data if isinstance(x, (ImagePlane, MotionField, MotionMask)) else np.asarray(x)


def _field(arr, kind):
    return MotionField(ImagePlane(arr.astype(np.float32), "vector2"), kind)


def _snap(mv):
    return np.where(np.abs(mv) < MV_SNAP, 0.0, mv)


def _centres(width, height):
    ys, xs = np.mgrid[0:height, 0:width]
    return np.stack([xs + 0.5, ys + 0.5], -1)


def traditional_mv(scene, t, resolution) -> MotionField:
    """Back-projection of each pixel's surface point into frame t-1, ignoring visibility."""
    width, height = resolution
    corr = surface_correspondence(scene, t, t - 1, resolution)
    mv = _snap(np.where(corr.valid[..., None], corr.xy - _centres(width, height), 0.0))
    return _field(mv.transpose(2, 0, 1), "TMV")


def dual_mv(scene, t, resolution) -> DualMotion:
    """TMV plus the dual vector that, for pixels hidden at t-1, follows the occluder instead.

    For an occluded pixel x with back-projection y, the occluder seen at y in frame t-1 is
    forward-projected to z in frame t and DMV = y - z.
    """
    width, height = resolution
    corr = surface_correspondence(scene, t, t - 1, resolution)
    centres = _centres(width, height)
    tmv = _snap(np.where(corr.valid[..., None], corr.xy - centres, 0.0))
    dmv = tmv.copy()
    occluded = corr.valid & ~corr.visible
    fallbacks = 0
    if np.any(occluded):
        y = corr.xy[occluded]
        cam_prev = scene.camera.at(t - 1)
        dirs = cam_prev.rays(y[:, 0], y[:, 1], width, height)
        occ = cast(scene, t - 1, cam_prev.position, dirs, geometry=False)
        world_now = np.zeros((y.shape[0], 3))
        for k, prim in enumerate(scene.primitives):
            sel = occ.prim == k
            if np.any(sel):
                world_now[sel] = to_world(prim, occ.local[sel], t)
        z, _, in_front = scene.camera.at(t).project(world_now, width, height)
        ok = occ.hit & in_front
        fallbacks = int((~ok).sum())
        d = np.where(ok[:, None], _snap(y - z), tmv[occluded])
        dmv[occluded] = d
    return DualMotion(_field(tmv.transpose(2, 0, 1), "TMV"), _field(dmv.transpose(2, 0, 1), "DMV"),
                      occluded, fallbacks)


def motion_mask(tmv, dmv, tau=DEFAULT_TAU) -> MotionMask:
    """1 where ||DMV - TMV||_2 >= tau (motion-unreliable), else 0."""
    a, b = _arr(tmv), _arr(dmv)
    if a.shape != b.shape:
        raise ValueError(f"motion fields differ in shape: {a.shape} vs {b.shape}")
    diff = np.sqrt(np.sum((b.astype(np.float64) - a.astype(np.float64)) ** 2, axis=0))
    return MotionMask(ImagePlane((diff >= tau).astype(np.float32)[None], "mask"), tau)


def bilinear_sample(image, pos):
    """Sample a (C, H, W) array at continuous pixel positions ``pos`` (..., 2), edge-clamped."""
    img = np.asarray(image)
    _, h, w = img.shape
    x = np.clip(pos[..., 0] - 0.5, 0.0, w - 1.0)
    y = np.clip(pos[..., 1] - 0.5, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[:, y0, x0] * (1.0 - fx) + img[:, y0, x1] * fx
    bot = img[:, y1, x0] * (1.0 - fx) + img[:, y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def backward_warp(image, mv) -> ImagePlane:
    img, m = _arr(image), _arr(mv)
    if img.shape[1:] != m.shape[1:]:
        raise ValueError(f"image {img.shape} and motion {m.shape} differ in size")
    _, h, w = img.shape
    pos = _centres(w, h) + m.transpose(1, 2, 0).astype(np.float64)
    tag = image.tag if isinstance(image, ImagePlane) else "linear-radiance"
    if tag in ("mask", "unit-normal"):
        tag = "scalar"
    return ImagePlane(bilinear_sample(img, pos).astype(np.float32), tag)


def warp_array(img, mv):
    """Array-level backward warp for batched (B, C, H, W) inputs with (B, 2, H, W) motion."""
    img = np.asarray(img)
    if img.ndim == 3:
        return backward_warp(img, mv).data
    return np.stack([backward_warp(i, m).data for i, m in zip(img, mv)])


def compose_mv(mv_a, mv_b) -> MotionField:
    """Chain t->t-1 (``mv_a``) with t-1->t-2 (``mv_b``): mv(p) = a(p) + b(p + a(p))."""
    a, b = _arr(mv_a), _arr(mv_b)
    if a.shape != b.shape:
        raise ValueError(f"motion fields differ in shape: {a.shape} vs {b.shape}")
    _, h, w = a.shape
    pos = _centres(w, h) + a.transpose(1, 2, 0).astype(np.float64)
    out = a.astype(np.float64) + bilinear_sample(b.astype(np.float64), pos)
    kind = mv_a.kind if isinstance(mv_a, MotionField) else "TMV"
    return _field(out, kind)


def upsample_bilinear(arr, s):
    """Resize (C, H, W) by integer factor ``s``; output centres map to (X + 0.5)/s - 0.5."""
    arr = np.asarray(arr)
    _, h, w = arr.shape
    ys, xs = np.mgrid[0:h * s, 0:w * s]
    pos = np.stack([(xs + 0.5) / s, (ys + 0.5) / s], -1)
    return bilinear_sample(arr, pos)


def hr_motion_fields(tmv_lr, dmv_lr, s, tau=DEFAULT_TAU):
    """Bilinear-upsample both fields by ``s``, rescale to HR pixel units, and threshold."""
    if s < 1:
        raise ValueError("upsampling factor must be >= 1")
    tmv = upsample_bilinear(_arr(tmv_lr).astype(np.float64), s) * s
    dmv = upsample_bilinear(_arr(dmv_lr).astype(np.float64), s) * s
    return _field(tmv, "TMV"), _field(dmv, "DMV"), motion_mask(tmv, dmv, tau)
