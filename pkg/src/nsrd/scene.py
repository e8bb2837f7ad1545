"""Procedural scenes: analytic primitives on rigid tracks, lights and a pinhole camera path."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .imagecore import SeededRng

TEXTURES = ("flat", "checker", "stripes", "grid-noise")


def rotation_matrix(axis, angle):
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    K = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) * c + s * K + (1 - c) * np.outer(axis, axis)


@dataclass
class Material:
    texture: str = "flat"
    albedo: tuple = (0.8, 0.8, 0.8)
    albedo2: tuple = (0.2, 0.2, 0.2)
    scale: float = 1.0
    metallic: float = 0.0
    roughness: float = 0.5
    noise_seed: int = 0

    def __post_init__(self):
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}")

    def albedo_at(self, uv):
        u, v = uv[..., 0] * self.scale, uv[..., 1] * self.scale
        c1 = np.asarray(self.albedo, float)
        c2 = np.asarray(self.albedo2, float)
        if self.texture == "flat":
            w = np.ones_like(u)
        elif self.texture == "checker":
            w = ((np.floor(u) + np.floor(v)) % 2 == 0).astype(float)
        elif self.texture == "stripes":
            w = (np.floor(u) % 2 == 0).astype(float)
        else:
            cu = np.floor(u).astype(np.int64) & 0xFFFFFFFF
            cv = np.floor(v).astype(np.int64) & 0xFFFFFFFF
            w = SeededRng(self.noise_seed).uniform(cu, cv, 0)
        return c2 + (c1 - c2) * w[..., None]


@dataclass
class Track:
    """Rigid motion as a function of (fractional) frame index: world = R(t) local + T(t)."""

    offset: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    amplitude: tuple = (0.0, 0.0, 0.0)
    omega: float = 0.0
    spin_axis: tuple = (0.0, 1.0, 0.0)
    spin: float = 0.0

    def rotation(self, t):
        if self.spin == 0.0:
            return np.eye(3)
        return rotation_matrix(self.spin_axis, self.spin * t)

    def translation(self, t):
        return (np.asarray(self.offset, float) + np.asarray(self.velocity, float) * t
                + np.asarray(self.amplitude, float) * np.sin(self.omega * t))


@dataclass
class Primitive:
    kind: str
    params: dict
    material: Material = field(default_factory=Material)
    track: Track = field(default_factory=Track)

    def __post_init__(self):
        if self.kind not in ("sphere", "plane", "quad"):
            raise ValueError(f"unknown primitive {self.kind!r}")
        self.params = {k: (np.asarray(v, float) if not np.isscalar(v) else float(v))
                       for k, v in self.params.items()}

    def intersect_local(self, o, d):
        """Nearest positive hit distance along local-frame rays, inf on miss."""
        p = self.params
        if self.kind == "sphere":
            oc = o - p["center"]
            if oc.ndim == 1:
                b = d @ oc
                c = oc @ oc - p["radius"] ** 2
            else:
                b = np.einsum("ij,ij->i", oc, d)
                c = np.einsum("ij,ij->i", oc, oc) - p["radius"] ** 2
            disc = b * b - c
            sq = np.sqrt(np.maximum(disc, 0.0))
            t0, t1 = -b - sq, -b + sq
            t = np.where(t0 > 1e-6, t0, np.where(t1 > 1e-6, t1, np.inf))
            return np.where(disc >= 0.0, t, np.inf)
        n = _unit(p["normal"]) if self.kind == "plane" else _unit(np.cross(p["e1"], p["e2"]))
        origin = p["point"] if self.kind == "plane" else p["corner"]
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((origin - o) @ n) / denom
        t = np.where((np.abs(denom) > 1e-12) & (t > 1e-6), t, np.inf)
        if self.kind == "quad":
            hit = o + d * np.where(np.isfinite(t), t, 0.0)[..., None]
            a, b = self._quad_coords(hit)
            t = np.where((a >= 0) & (a <= 1) & (b >= 0) & (b <= 1), t, np.inf)
        return t

    def _quad_coords(self, q):
        p = self.params
        rel = q - p["corner"]
        e1, e2 = p["e1"], p["e2"]
        g = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
        rhs = np.stack([rel @ e1, rel @ e2], -1)
        ab = rhs @ np.linalg.inv(g).T
        return ab[..., 0], ab[..., 1]

    def surface_local(self, q):
        """Local-frame normal and texture coordinates at local points ``q``."""
        p = self.params
        if self.kind == "sphere":
            n = (q - p["center"]) / p["radius"]
            u = np.arctan2(n[..., 2], n[..., 0]) / (2 * np.pi) + 0.5
            v = np.arccos(np.clip(n[..., 1], -1, 1)) / np.pi
            return n, np.stack([u * 2 * np.pi * p["radius"], v * np.pi * p["radius"]], -1)
        if self.kind == "plane":
            n = np.broadcast_to(_unit(p["normal"]), q.shape)
            rel = q - p["point"]
            return n, np.stack([rel @ _unit(p["u"]), rel @ _unit(np.cross(p["normal"], p["u"]))], -1)
        n = np.broadcast_to(_unit(np.cross(p["e1"], p["e2"])), q.shape)
        a, b = self._quad_coords(q)
        return n, np.stack([a * np.linalg.norm(p["e1"]), b * np.linalg.norm(p["e2"])], -1)


@dataclass
class Light:
    kind: str
    vector: tuple
    color: tuple

    def __post_init__(self):
        if self.kind not in ("directional", "point"):
            raise ValueError(f"unknown light {self.kind!r}")


@dataclass
class CameraTrack:
    position: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.0, 0.0, 0.0)
    look_at: tuple = (0.0, 0.0, -1.0)
    look_velocity: tuple = (0.0, 0.0, 0.0)
    fov: float = 45.0
    sway: tuple = (0.0, 0.0, 0.0)
    sway_omega: float = 0.0

    def __post_init__(self):
        if not 10.0 < self.fov < 120.0:
            raise ValueError(f"camera fov {self.fov} outside (10, 120) degrees")
        if np.allclose(np.asarray(self.look_at, float), np.asarray(self.position, float)):
            raise ValueError("degenerate camera: look_at equals position")

    def at(self, t) -> "Camera":
        pos = (np.asarray(self.position, float) + np.asarray(self.velocity, float) * t
               + np.asarray(self.sway, float) * np.sin(self.sway_omega * t))
        look = np.asarray(self.look_at, float) + np.asarray(self.look_velocity, float) * t
        return Camera(pos, look, self.fov)


class Camera:
    def __init__(self, position, look_at, fov):
        self.position = np.asarray(position, float)
        fwd = np.asarray(look_at, float) - self.position
        if np.linalg.norm(fwd) < 1e-12:
            raise ValueError("degenerate camera direction")
        self.forward = _unit(fwd)
        right = np.cross(self.forward, [0.0, 1.0, 0.0])
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(self.forward, [0.0, 0.0, 1.0])
        self.right = _unit(right)
        self.up = np.cross(self.right, self.forward)
        self.tan_half = np.tan(np.radians(fov) / 2.0)

    def rays(self, xs, ys, width, height):
        """Unit directions through continuous pixel coordinates (pixel centres at +0.5)."""
        aspect = width / height
        nx = (2.0 * np.asarray(xs, float) / width - 1.0) * self.tan_half * aspect
        ny = (1.0 - 2.0 * np.asarray(ys, float) / height) * self.tan_half
        d = self.forward + nx[..., None] * self.right + ny[..., None] * self.up
        return _unit(d)

    def project(self, points, width, height):
        """World points -> (screen xy in pixels, distance, in_front)."""
        rel = points - self.position
        z = rel @ self.forward
        in_front = z > 1e-6
        zs = np.where(in_front, z, 1.0)
        aspect = width / height
        nx = (rel @ self.right) / zs / (self.tan_half * aspect)
        ny = (rel @ self.up) / zs / self.tan_half
        xy = np.stack([(nx + 1.0) * 0.5 * width, (1.0 - ny) * 0.5 * height], -1)
        return xy, np.linalg.norm(rel, axis=-1), in_front


@dataclass
class SceneDescription:
    primitives: list
    lights: list
    camera: CameraTrack
    frames: int = 60
    name: str = "custom"

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("scene has no primitives")

    def to_json(self) -> dict:
        d = asdict(self)
        for p in d["primitives"]:
            p["params"] = {k: np.asarray(v).tolist() for k, v in p["params"].items()}
        return json.loads(json.dumps(d))


def _unit(v):
    v = np.asarray(v, float)
    return v / np.sqrt(np.einsum("...i,...i->...", v, v))[..., None]


# ---------------------------------------------------------------------------
# scene library

def focal_pixels(fov, height):
    return height / (2.0 * np.tan(np.radians(fov) / 2.0))


def flat_wall_scene(albedo=(0.6, 0.6, 0.6), frames=4):
    """Fronto-parallel diffuse wall filling the view, one head-on directional light."""
    wall = Primitive("plane", {"point": (0, 0, -5), "normal": (0, 0, 1), "u": (1, 0, 0)},
                     Material("flat", albedo, metallic=0.0, roughness=1.0))
    light = Light("directional", (0, 0, -1), (3.0, 3.0, 3.0))
    return SceneDescription([wall], [light], CameraTrack((0, 0, 0), look_at=(0, 0, -1), fov=40), frames, "flat")


def static_scene(frames=4):
    """Textured objects, nothing moves."""
    prims = [
        Primitive("plane", {"point": (0, -1, 0), "normal": (0, 1, 0), "u": (1, 0, 0)},
                  Material("checker", (0.8, 0.8, 0.75), (0.15, 0.15, 0.2), 1.5, 0.0, 0.8)),
        Primitive("sphere", {"center": (0, 0, 0), "radius": 0.8},
                  Material("stripes", (0.9, 0.3, 0.2), (0.2, 0.3, 0.9), 3.0, 0.3, 0.4),
                  Track(offset=(0.2, -0.2, -4.5))),
        Primitive("quad", {"corner": (-4, -1, -8), "e1": (8, 0, 0), "e2": (0, 5, 0)},
                  Material("grid-noise", (0.9, 0.9, 0.9), (0.3, 0.3, 0.3), 2.0, 0.0, 0.9, 7)),
    ]
    lights = [Light("directional", (0.4, -1.0, -0.5), (2.5, 2.4, 2.2)),
              Light("point", (-2.0, 2.0, -2.0), (6.0, 6.0, 7.0))]
    return SceneDescription(prims, lights, CameraTrack((0, 0.5, 1.0), look_at=(0, -0.3, -4.0), fov=50),
                            frames, "static")


def pan_scene(pixels_per_frame=1.0, lr_height=48, depth=20.0, frames=4, texture="stripes"):
    """Camera translating right over a distant fronto-parallel plane; image shift is exact."""
    fov = 40.0
    speed = pixels_per_frame * depth / focal_pixels(fov, lr_height)
    wall = Primitive("plane", {"point": (0, 0, -depth), "normal": (0, 0, 1), "u": (1, 0, 0)},
                     Material(texture, (0.8, 0.7, 0.6), (0.2, 0.25, 0.3), 0.5, 0.0, 1.0))
    light = Light("directional", (0.0, 0.0, -1.0), (3.0, 3.0, 3.0))
    cam = CameraTrack((0, 0, 0), (speed, 0, 0), (0, 0, -1), (speed, 0, 0), fov)
    return SceneDescription([wall], [light], cam, frames, "pan")


def sliding_occluder_scene(pixels_per_frame=2.0, lr_height=48, frames=6, texture="checker"):
    """Static camera, fronto-parallel background, a quad sliding left in front of it."""
    fov = 40.0
    f = focal_pixels(fov, lr_height)
    occ_depth, bg_depth = 5.0, 10.0
    speed = pixels_per_frame * occ_depth / f
    half = np.tan(np.radians(fov) / 2) * occ_depth
    bg = Primitive("plane", {"point": (0, 0, -bg_depth), "normal": (0, 0, 1), "u": (1, 0, 0)},
                   Material(texture, (0.85, 0.8, 0.7), (0.25, 0.3, 0.35), 1.0, 0.0, 0.9))
    occ = Primitive("quad", {"corner": (0, -0.5 * half, 0), "e1": (0.6 * half, 0, 0), "e2": (0, half, 0)},
                    Material("stripes", (0.2, 0.6, 0.9), (0.9, 0.9, 0.2), 4.0, 0.0, 0.7),
                    Track(offset=(0.1 * half, 0, -occ_depth), velocity=(-speed, 0, 0)))
    light = Light("directional", (0.0, 0.0, -1.0), (3.0, 3.0, 3.0))
    return SceneDescription([bg, occ], [light], CameraTrack((0, 0, 0), look_at=(0, 0, -1), fov=fov),
                            frames, "sliding")


def demo_scene(seed=0, frames=60):
    """Randomised textured scene with moving objects, a moving occluder and a moving camera."""
    r = np.random.default_rng(seed)

    def color(lo=0.15, hi=0.95):
        return tuple(np.round(r.uniform(lo, hi, 3), 3))

    prims = [
        Primitive("plane", {"point": (0, -1, 0), "normal": (0, 1, 0), "u": (1, 0, 0)},
                  Material(str(r.choice(["checker", "grid-noise"])), color(0.6), color(0.03, 0.3),
                           float(r.uniform(3.0, 6.0)), 0.0, float(r.uniform(0.5, 1.0)), int(r.integers(1 << 30)))),
        Primitive("quad", {"corner": (-8, -1, -9), "e1": (16, 0, 0), "e2": (0, 8, 0)},
                  Material(str(r.choice(["stripes", "grid-noise", "checker"])), color(0.5), color(0.03, 0.3),
                           float(r.uniform(3.0, 6.0)), 0.0, float(r.uniform(0.6, 1.0)), int(r.integers(1 << 30)))),
    ]
    for k in range(3):
        tex = str(r.choice(["checker", "stripes", "grid-noise"]))
        metallic = float(r.choice([0.0, 0.0, 1.0])) if k else 0.0
        prims.append(Primitive(
            "sphere", {"center": (0, 0, 0), "radius": float(r.uniform(0.45, 0.8))},
            Material(tex, color(), color(0.05, 0.5), float(r.uniform(4, 9)), metallic,
                     float(r.uniform(0.25, 0.8)), int(r.integers(1 << 30))),
            Track(offset=(float(r.uniform(-2.2, 2.2)), float(r.uniform(-0.3, 0.4)), float(r.uniform(-6.5, -3.5))),
                  velocity=(float(r.uniform(-0.03, 0.03)), 0.0, float(r.uniform(-0.02, 0.02))),
                  amplitude=(float(r.uniform(0.3, 1.0)), float(r.uniform(0.0, 0.2)), 0.0),
                  omega=float(r.uniform(0.05, 0.15)), spin_axis=(0, 1, 0), spin=float(r.uniform(-0.06, 0.06)))))
    # fast occluder sweeping across the view
    side = float(r.choice([-1.0, 1.0]))
    prims.append(Primitive(
        "quad", {"corner": (-0.5, -0.9, 0.0), "e1": (1.0, 0, 0), "e2": (0, 1.6, 0)},
        Material("stripes", color(), color(0.05, 0.4), float(r.uniform(4, 8)), 0.0, 0.6, 0),
        Track(offset=(side * 3.0, 0.0, float(r.uniform(-3.2, -2.6))), velocity=(-side * 0.1, 0, 0))))
    sun = r.normal(size=3)
    sun[1] = -abs(sun[1]) - 1.0
    sun[2] = -abs(sun[2])  # lit from behind the camera so the backdrop faces the sun
    lights = [Light("directional", tuple(np.round(sun, 3)), (2.2, 2.1, 1.9)),
              Light("point", (float(r.uniform(-2, 2)), 2.5, float(r.uniform(-4, -1))), (5.0, 5.0, 5.5))]
    cam = CameraTrack(position=(float(r.uniform(-1, 1)), float(r.uniform(0.3, 0.9)), 1.5),
                      velocity=(float(r.uniform(-0.04, 0.04)), 0.0, float(r.uniform(-0.04, 0.0))),
                      look_at=(0.0, -0.3, -5.0), look_velocity=(float(r.uniform(-0.05, 0.05)), 0.0, 0.0),
                      fov=float(r.uniform(45, 60)), sway=(0.3, 0.1, 0.0), sway_omega=float(r.uniform(0.05, 0.15)))
    return SceneDescription(prims, lights, cam, frames, f"demo{seed}")


def make_scene(name: str, seed: int = 0, frames: int = 60) -> SceneDescription:
    """Resolve a CLI scene name: ``demo<k>`` (k offsets the seed), ``static``, ``flat``, ``sliding``, ``pan``."""
    if name.startswith("demo"):
        k = int(name[4:] or 0)
        return demo_scene(seed * 1000 + k, frames)
    table = {"static": static_scene, "flat": flat_wall_scene, "sliding": sliding_occluder_scene,
             "pan": pan_scene}
    if name not in table:
        raise ValueError(f"unknown scene {name!r}")
    return table[name](frames=frames)
