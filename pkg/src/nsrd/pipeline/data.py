"""Dataset generation/caching, manifests, and per-frame network inputs.

Every per-frame quantity built here for frame t reads only frames <= t, so truncating a
sequence never changes the inputs of the frames that remain.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..brdf import BrdfLut, build_lut
from ..demod import material_response
from ..imagecore import read_pfm, read_tensor_blob
from ..motionfield import DEFAULT_TAU, compose_mv, dual_mv, hr_motion_fields, motion_mask, warp_array
from ..renderer import RenderConfig, generate_dataset
from ..scene import make_scene
from .config import Config, cache_dir

log = logging.getLogger(__name__)

DEPTH_SCALE = 5.0
SPLITS = ("train", "val", "test")


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def ensure_lut(resolution=512, spp=1024, seed=0, root=None) -> BrdfLut:
    """Build the split-sum table once and keep it under the cache directory."""
    root = Path(root) if root else cache_dir()
    path = root / f"lut_{resolution}_{spp}_{seed}.nsrd"
    if path.exists():
        return BrdfLut.load(path, spp)
    log.info("building %dx%d BRDF LUT at %d spp", resolution, resolution, spp)
    lut = build_lut(resolution, spp, seed)
    root.mkdir(parents=True, exist_ok=True)
    lut.save(path)
    return lut


@dataclass
class SequenceManifest:
    root: Path
    scene: dict
    config: dict
    frames: list
    split: str = "train"
    scene_key: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.frames)

    def path(self, t, name) -> Path:
        return self.root / self.frames[t][name]

    def truncated(self, n) -> "SequenceManifest":
        return SequenceManifest(self.root, self.scene, self.config, self.frames[:n], self.split,
                                self.scene_key)

    @property
    def render_config(self) -> RenderConfig:
        return RenderConfig(**self.config)


def load_manifest(path) -> SequenceManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    d = json.loads(path.read_text())
    m = SequenceManifest(path.parent, d["scene"], d["config"], d["frames"], d.get("split", "train"),
                         d.get("scene_key", {}))
    if m.split not in SPLITS:
        raise ValueError(f"manifest split {m.split!r} not one of {SPLITS}")
    for t, entry in enumerate(m.frames):
        if entry["index"] != t:
            raise ValueError(f"{path}: frames are not contiguous at position {t}")
        for key, rel in entry.items():
            if key != "index" and not (m.root / rel).exists():
                raise FileNotFoundError(f"{path}: missing {rel}")
    return m


def render_sequence(name, scene_seed, split, render: RenderConfig, out_dir, lut) -> SequenceManifest:
    scene = make_scene(name, scene_seed, render.frames)
    manifest = generate_dataset(scene, render, out_dir, lut)
    manifest["split"] = split
    manifest["scene_key"] = {"name": name, "seed": scene_seed}
    Path(out_dir, "manifest.json").write_text(json.dumps(manifest, indent=1))
    return load_manifest(out_dir)


def ensure_dataset(cfg: Config, lut: BrdfLut, splits=SPLITS, root=None) -> dict:
    """Render (or reuse cached) sequences for each split. Returns {split: [manifest, ...]}."""
    root = Path(root) if root else cache_dir()
    out = {}
    for split in splits:
        out[split] = []
        for name in getattr(cfg.data, split):
            key = _digest({"render": asdict(cfg.render), "scene": name, "seed": cfg.data.scene_seed,
                           "lut": [lut.resolution, lut.spp]})
            seq_dir = root / "datasets" / f"{name}_{key}"
            if (seq_dir / "manifest.json").exists():
                m = load_manifest(seq_dir)
                m.split = split
            else:
                log.info("rendering %s (%s) into %s", name, split, seq_dir)
                m = render_sequence(name, cfg.data.scene_seed, split, cfg.render, seq_dir, lut)
            out[split].append(m)
    return out


def depth_feature(depth):
    """Bounded depth encoding d / (d + D); background (infinite depth) maps to 1."""
    d = np.asarray(depth, np.float64)
    finite = np.isfinite(d)
    safe = np.where(finite, d, 0.0)
    return np.where(finite, safe / (safe + DEPTH_SCALE), 1.0).astype(np.float32)


@dataclass
class Sequence:
    """Stacked per-frame arrays, leading axis = frame."""
    name: str
    lr_in: np.ndarray        # (N, 7, h, w): lighting, normal, depth feature
    warp_in: np.ndarray      # (N, 16, h, w)
    lr_material: np.ndarray  # (N, 3, h, w)
    tmv_lr: np.ndarray       # (N, 2, h, w)
    mask_lr: np.ndarray      # (N, 1, h, w)
    tmv_hr: np.ndarray       # (N, 2, H, W)
    mask_hr: np.ndarray      # (N, 1, H, W)
    target: np.ndarray       # (N, 3, H, W) HR lighting (or radiance with demodulation off)
    hr_material: np.ndarray  # (N, 3, H, W)
    gt_radiance: np.ndarray | None = None
    sr_factor: int = 4

    def __len__(self):
        return self.lr_in.shape[0]

    @property
    def lr_lighting(self):
        return self.lr_in[:, :3]


def warp_features(lighting, normal, depthf, tmv, mask, t, use_mask=True):
    """16-channel history input for frame t from frames t-1 and t-2 (clamped at 0).

    Layout: warped lighting t-1, warped lighting t-2, mask t-1, mask t-2, then warped
    normal + depth for t-1 and for t-2.
    """
    p1, p2 = max(t - 1, 0), max(t - 2, 0)
    mv1 = tmv[t]
    mv2 = compose_mv(tmv[t], tmv[p1]).data
    stack1 = np.concatenate([lighting[p1], normal[p1], depthf[p1]])
    stack2 = np.concatenate([lighting[p2], normal[p2], depthf[p2]])
    w1 = warp_array(stack1, mv1)
    w2 = warp_array(stack2, mv2)
    m1 = mask[t]
    # a two-step history is unreliable where either step was disoccluded
    m2 = np.maximum(m1, (warp_array(mask[p1], mv1) > 0).astype(np.float32))
    if not use_mask:
        m1, m2 = np.zeros_like(m1), np.zeros_like(m2)
    return np.concatenate([w1[:3], w2[:3], m1, m2, w1[3:], w2[3:]]).astype(np.float32)


def prepare_sequence(m: SequenceManifest, lut: BrdfLut, demodulation=True, motion_mask_on=True,
                     tau=DEFAULT_TAU, with_radiance=False) -> Sequence:
    n = len(m)
    s = m.render_config.sr_factor

    def stack(name, tag="scalar"):
        return np.stack([read_pfm(m.path(t, name), tag).data for t in range(n)])

    radiance = stack("radiance", "linear-radiance")
    albedo, metallic, rough, nov = stack("albedo"), stack("metallic"), stack("roughness"), stack("nov")
    normal, depth = stack("normal"), stack("depth", "depth")
    hit = np.isfinite(depth[:, 0])
    if demodulation:
        material = np.stack([material_response(albedo[t], metallic[t, 0], rough[t, 0], nov[t, 0], hit[t], lut)
                             for t in range(n)])
        lighting = radiance / material
        target = stack("gt_lighting", "linear-radiance")
        hr_material = stack("hr_material", "linear-radiance")
    else:
        material = np.ones_like(radiance)
        lighting = radiance
        target = stack("gt_radiance", "linear-radiance")
        hr_material = np.ones_like(target)
    depthf = depth_feature(depth)
    tmv = np.stack([read_tensor_blob(m.path(t, "tmv")) for t in range(n)])
    dmv = np.stack([read_tensor_blob(m.path(t, "dmv")) for t in range(n)])
    mask = np.stack([motion_mask(tmv[t], dmv[t], tau).data for t in range(n)])
    warp_in = np.stack([warp_features(lighting, normal, depthf, tmv, mask, t, motion_mask_on)
                        for t in range(n)])
    tmv_hr, mask_hr = [], []
    for t in range(n):
        th, _, mh = hr_motion_fields(tmv[t], dmv[t], s, tau)
        tmv_hr.append(th.data)
        mask_hr.append(mh.data if motion_mask_on else np.zeros_like(mh.data))
    gt_rad = stack("gt_radiance", "linear-radiance") if with_radiance else None
    lr_in = np.concatenate([lighting, normal, depthf], axis=1).astype(np.float32)
    name = m.scene_key.get("name", m.scene.get("name", m.root.name))
    return Sequence(name, lr_in, warp_in, material.astype(np.float32), tmv, mask, np.stack(tmv_hr),
                    np.stack(mask_hr), target.astype(np.float32), hr_material.astype(np.float32),
                    gt_rad, s)


@dataclass
class Batch:
    """Training window, leading axes (T, B)."""
    lr_in: np.ndarray
    warp_in: np.ndarray
    tmv_hr: np.ndarray
    mask_hr: np.ndarray
    target: np.ndarray

    def arrays(self) -> dict:
        return asdict(self)


def crop_window(seq: Sequence, t0, T, y, x, crop) -> dict:
    s = seq.sr_factor
    lr = np.s_[t0:t0 + T, :, y:y + crop, x:x + crop]
    hr = np.s_[t0:t0 + T, :, y * s:(y + crop) * s, x * s:(x + crop) * s]
    return {"lr_in": seq.lr_in[lr], "warp_in": seq.warp_in[lr], "tmv_hr": seq.tmv_hr[hr],
            "mask_hr": seq.mask_hr[hr], "target": seq.target[hr]}


def sample_batch(seqs, rng: np.random.Generator, batch, T, crop) -> Batch:
    parts = []
    for _ in range(batch):
        seq = seqs[int(rng.integers(len(seqs)))]
        n, _, h, w = seq.lr_in.shape
        if n < T:
            raise ValueError(f"sequence {seq.name} has {n} frames, unroll needs {T}")
        t0 = int(rng.integers(n - T + 1))
        y = int(rng.integers(h - crop + 1))
        x = int(rng.integers(w - crop + 1))
        parts.append(crop_window(seq, t0, T, y, x, crop))
    return Batch(**{k: np.ascontiguousarray(np.stack([p[k] for p in parts], axis=1)) for k in parts[0]})


def disocclusion_oracle(m: SequenceManifest, cache=True) -> np.ndarray:
    """(N, H, W) bool: HR pixels whose surface was hidden in the previous frame (frame 0 empty)."""
    path = m.root / "disocclusion_hr.npz"
    if cache and path.exists():
        return np.load(path)["band"]
    if not m.scene_key:
        raise ValueError("manifest has no scene key; cannot rebuild the scene")
    rc = m.render_config
    scene = make_scene(m.scene_key["name"], m.scene_key["seed"], rc.frames)
    w, h = rc.hr_size
    band = np.zeros((len(m), h, w), bool)
    for t in range(1, len(m)):
        band[t] = dual_mv(scene, t, (w, h)).occluded
    if cache:
        np.savez_compressed(path, band=band)
    return band
