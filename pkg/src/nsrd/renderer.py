"""Analytic ray-cast deferred renderer: G-buffers, direct lighting with hard shadows,
supersampled ground truth and exact surface correspondences between frames."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .brdf import ShadingPoint, eval_brdf
from .imagecore import (FrameBundle, ImagePlane, SeededRng, box_downsample, write_pfm,
                        write_tensor_blob)
from .scene import SceneDescription

log = logging.getLogger(__name__)

SHADOW_BIAS = 1e-4
DEPTH_EPS = 1e-3  # relative z-tolerance of the occlusion test


@dataclass
class RenderConfig:
    lr_size: tuple = (48, 48)
    sr_factor: int = 4
    gt_supersample: int = 2
    gt_spp: int = 4
    frames: int = 60
    seed: int = 0

    def __post_init__(self):
        self.lr_size = tuple(int(v) for v in self.lr_size)
        if self.sr_factor not in (2, 4, 6):
            raise ValueError(f"sr_factor must be 2, 4 or 6, got {self.sr_factor}")

    @property
    def hr_size(self):
        return self.lr_size[0] * self.sr_factor, self.lr_size[1] * self.sr_factor


@dataclass
class Hits:
    dist: np.ndarray
    prim: np.ndarray
    local: np.ndarray
    normal: np.ndarray
    uv: np.ndarray

    @property
    def hit(self):
        return self.prim >= 0


def _pose(prim, t):
    return prim.track.rotation(t), prim.track.translation(t)


def to_world(prim, local, t):
    R, T = _pose(prim, t)
    return local @ R.T + T


def cast(scene: SceneDescription, t, origins, dirs, geometry=True) -> Hits:
    """Nearest hit of each ray against the scene posed at frame ``t``.

    ``origins`` may be a single point shared by all rays.
    """
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    prim_id = np.full(n, -1, dtype=np.int64)
    poses = [_pose(prim, t) for prim in scene.primitives]
    for k, (prim, (R, T)) in enumerate(zip(scene.primitives, poses)):
        rotated = prim.track.spin != 0.0
        o_l = (origins - T) @ R if rotated else origins - T
        d_l = dirs @ R if rotated else dirs
        d = prim.intersect_local(o_l, d_l)
        closer = d < best
        best = np.where(closer, d, best)
        prim_id[closer] = k
    local = np.zeros((n, 3))
    normal = np.zeros((n, 3))
    uv = np.zeros((n, 2))
    for k, (prim, (R, T)) in enumerate(zip(scene.primitives, poses)):
        sel = prim_id == k
        if not np.any(sel):
            continue
        o = origins[sel] if np.ndim(origins) == 2 else origins
        local[sel] = (o + dirs[sel] * best[sel, None] - T) @ R
        if geometry:
            nl, uvk = prim.surface_local(local[sel])
            nw = nl @ R.T
            nw = nw / np.sqrt(np.einsum("ij,ij->i", nw, nw))[:, None]
            # two-sided surfaces: face the incoming ray
            flip = np.einsum("ij,ij->i", nw, dirs[sel]) > 0
            nw[flip] *= -1
            normal[sel] = nw
            uv[sel] = uvk
    return Hits(best, prim_id, local, normal, uv)


def _pixel_grid(width, height):
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.ravel() + 0.5, ys.ravel() + 0.5


def _shade(scene, t, cam_pos, dirs, hits: Hits, lighting=True):
    """Albedo, metallic, roughness and direct radiance for a batch of primary hits."""
    n_rays = dirs.shape[0]
    albedo = np.zeros((n_rays, 3))
    metallic = np.zeros(n_rays)
    rough = np.zeros(n_rays)
    for k, prim in enumerate(scene.primitives):
        sel = hits.prim == k
        if np.any(sel):
            albedo[sel] = prim.material.albedo_at(hits.uv[sel])
            metallic[sel] = prim.material.metallic
            rough[sel] = prim.material.roughness
    radiance = np.zeros((n_rays, 3))
    h = hits.hit
    if not lighting or not np.any(h) or not scene.lights:
        return albedo, metallic, rough, radiance
    p = cam_pos + dirs[h] * hits.dist[h, None]
    nrm = hits.normal[h]
    point = ShadingPoint(nrm, -dirs[h], albedo[h], metallic[h], rough[h])
    acc = np.zeros((int(h.sum()), 3))
    origin = p + nrm * SHADOW_BIAS * (1.0 + hits.dist[h, None])
    for light in scene.lights:
        if light.kind == "directional":
            wi = -np.asarray(light.vector, float)
            wi = np.broadcast_to(wi / np.linalg.norm(wi), p.shape)
            irr = np.broadcast_to(np.asarray(light.color, float), p.shape)
            tmax = np.full(p.shape[0], np.inf)
        else:
            to_l = np.asarray(light.vector, float) - p
            dist = np.linalg.norm(to_l, axis=-1)
            wi = to_l / dist[:, None]
            irr = np.asarray(light.color, float) / (dist ** 2)[:, None]
            tmax = dist
        cos_i = np.einsum("ij,ij->i", nrm, wi)
        lit = cos_i > 0
        if not np.any(lit):
            continue
        occ = cast(scene, t, origin[lit], np.ascontiguousarray(wi[lit]), geometry=False)
        vis = occ.dist >= tmax[lit]
        idx = np.flatnonzero(lit)[vis]
        sub = ShadingPoint(nrm[idx], point.v[idx], point.albedo[idx], point.metallic[idx],
                           point.roughness[idx])
        acc[idx] += eval_brdf(sub, wi[idx]) * cos_i[idx, None] * irr[idx]
    radiance[h] = acc
    return albedo, metallic, rough, radiance


def _planes(arr, width, height):
    arr = np.asarray(arr)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr.reshape(height, width, -1).transpose(2, 0, 1).astype(np.float32)


def render_frame(scene: SceneDescription, t, resolution, rng: SeededRng | None = None,
                 shade=True) -> FrameBundle:
    """One sample per pixel at pixel centres. Motion planes are left empty (see motionfield)."""
    width, height = resolution
    cam = scene.camera.at(t)
    xs, ys = _pixel_grid(width, height)
    dirs = cam.rays(xs, ys, width, height)
    hits = cast(scene, t, cam.position, dirs)
    albedo, metallic, rough, radiance = _shade(scene, t, cam.position, dirs, hits, shade)
    hit = hits.hit
    depth = np.where(hit, hits.dist, np.inf)
    nov = np.where(hit, np.clip(np.sum(hits.normal * -dirs, -1), 0.0, 1.0), 0.0)
    return FrameBundle(
        radiance=ImagePlane(_planes(radiance, width, height)),
        albedo=ImagePlane(_planes(albedo, width, height), "scalar"),
        metallic=ImagePlane(_planes(metallic, width, height), "scalar"),
        roughness=ImagePlane(_planes(rough, width, height), "scalar"),
        normal=ImagePlane(_planes(hits.normal, width, height), "unit-normal"),
        depth=ImagePlane(_planes(depth, width, height), "depth"),
        nov=ImagePlane(_planes(nov, width, height), "scalar"),
        frame_index=int(t),
        hit=hit.reshape(height, width),
    )


def _supersample(scene, t, resolution, rng: SeededRng, spp, lut=None):
    width, height = resolution
    cam = scene.camera.at(t)
    ys, xs = np.mgrid[0:height, 0:width]
    xs, ys = xs.ravel(), ys.ravel()
    m = int(round(np.sqrt(spp)))
    if m * m != spp:
        raise ValueError("supersampling spp must be a perfect square")
    acc = np.zeros((xs.size, 3))
    mat = np.zeros((3, 1, xs.size)) if lut is not None else None
    for k in range(spp):
        jx = (k % m + rng.uniform(xs, ys, k, 0)) / m
        jy = (k // m + rng.uniform(xs, ys, k, 1)) / m
        dirs = cam.rays(xs + jx, ys + jy, width, height)
        hits = cast(scene, t, cam.position, dirs)
        albedo, metallic, rough, radiance = _shade(scene, t, cam.position, dirs, hits)
        acc += radiance
        if lut is not None:
            from .demod import material_response
            nov = np.clip(np.sum(hits.normal * -dirs, -1), 0.0, 1.0)
            mat += material_response(albedo.T[:, None], metallic[None], rough[None], nov[None],
                                     hits.hit[None], lut)
    rad = ImagePlane(_planes(acc / spp, width, height))
    if lut is None:
        return rad, None
    return rad, ImagePlane(_planes((mat[:, 0] / spp).T, width, height), "linear-radiance")


def render_supersampled(scene, t, resolution, rng: SeededRng, spp=4) -> ImagePlane:
    """Radiance averaged over ``spp`` stratified jittered samples per pixel."""
    return _supersample(scene, t, resolution, rng, spp)[0]


@dataclass
class GroundTruth:
    radiance: ImagePlane
    frame: FrameBundle
    lighting: ImagePlane | None = None
    material: ImagePlane | None = None


def render_ground_truth(scene, t, hr_resolution, seed=0, lut=None, supersample=2, spp=4) -> GroundTruth:
    """Render at ``supersample`` x HR with jittered samples and box-filter down to HR.

    With a LUT, also returns the HR material component averaged over the same sub-samples
    (a filtered material buffer) and the HR lighting target obtained by demodulating with it.
    Point-sampling the material instead would leave texture aliasing in the lighting target.
    """
    from .demod import demodulate

    w, h = hr_resolution
    rng = SeededRng(seed).child(1_000_003 * (int(t) + 1))
    big, big_mat = _supersample(scene, t, (w * supersample, h * supersample), rng, spp, lut)
    radiance = box_downsample(big, supersample)
    frame = render_frame(scene, t, hr_resolution, shade=False)
    if lut is None:
        return GroundTruth(radiance, frame)
    mat = box_downsample(big_mat, supersample)
    return GroundTruth(radiance, frame, demodulate(radiance, mat), mat)


@dataclass
class Correspondence:
    xy: np.ndarray        # (H, W, 2) screen position at t2, pixels
    visible: np.ndarray   # (H, W) surface point unoccluded at t2
    valid: np.ndarray     # (H, W) hit at t and in front of the t2 camera
    hits: Hits


def surface_correspondence(scene, t, t2, resolution, pixels=None) -> Correspondence:
    """Follow the surface seen through each pixel centre at ``t`` to its screen position at ``t2``.

    ``pixels`` optionally restricts to an (N, 2) array of continuous (x, y) positions; the
    returned arrays are then flat.
    """
    width, height = resolution
    cam = scene.camera.at(t)
    if pixels is None:
        xs, ys = _pixel_grid(width, height)
        shape = (height, width)
    else:
        pixels = np.asarray(pixels, float).reshape(-1, 2)
        xs, ys = pixels[:, 0], pixels[:, 1]
        shape = (pixels.shape[0],)
    dirs = cam.rays(xs, ys, width, height)
    hits = cast(scene, t, cam.position, dirs, geometry=False)
    world2 = np.zeros_like(hits.local)
    for k, prim in enumerate(scene.primitives):
        sel = hits.prim == k
        if np.any(sel):
            world2[sel] = to_world(prim, hits.local[sel], t2)
    cam2 = scene.camera.at(t2)
    xy, dist2, in_front = cam2.project(world2, width, height)
    valid = hits.hit & in_front
    visible = np.zeros_like(valid)
    if np.any(valid):
        d2 = world2[valid] - cam2.position
        d2 /= np.linalg.norm(d2, axis=-1, keepdims=True)
        occ = cast(scene, t2, cam2.position, d2, geometry=False)
        visible[valid] = dist2[valid] <= occ.dist + DEPTH_EPS * dist2[valid]
    return Correspondence(xy.reshape(*shape, 2), visible.reshape(shape), valid.reshape(shape), hits)


def generate_dataset(scene, config: RenderConfig, out_dir, lut) -> dict:
    """Render a sequence to ``out_dir`` (PFM planes, NSRD motion blobs) and write manifest.json."""
    from .motionfield import dual_mv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = []
    fallbacks = 0
    for t in range(config.frames):
        fdir = out / f"frame_{t:04d}"
        fdir.mkdir(exist_ok=True)
        lr = render_frame(scene, t, config.lr_size)
        if t == 0:
            zero = np.zeros((2, config.lr_size[1], config.lr_size[0]), np.float32)
            tmv, dmv = zero, zero
        else:
            res = dual_mv(scene, t, config.lr_size)
            tmv, dmv = res.tmv.data, res.dmv.data
            fallbacks += res.fallbacks
        gt = render_ground_truth(scene, t, config.hr_size, config.seed, lut, config.gt_supersample,
                                 config.gt_spp)
        entry = {"index": t}
        for name in ("radiance", "albedo", "metallic", "roughness", "normal", "depth", "nov"):
            write_pfm(getattr(lr, name), fdir / f"{name}.pfm")
            entry[name] = f"{fdir.name}/{name}.pfm"
        for name, arr in (("tmv", tmv), ("dmv", dmv)):
            write_tensor_blob(np.ascontiguousarray(arr, dtype=np.float32), fdir / f"{name}.nsrd")
            entry[name] = f"{fdir.name}/{name}.nsrd"
        for name, plane in (("gt_radiance", gt.radiance), ("gt_lighting", gt.lighting),
                            ("hr_material", gt.material)):
            write_pfm(plane, fdir / f"{name}.pfm")
            entry[name] = f"{fdir.name}/{name}.pfm"
        frames.append(entry)
        log.debug("rendered frame %d of %s", t, scene.name)
    manifest = {"scene": scene.to_json(), "config": asdict(config), "frames": frames,
                "diagnostics": {"dmv_fallbacks": int(fallbacks)}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest
