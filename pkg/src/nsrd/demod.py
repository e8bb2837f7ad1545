"""Material component from G-buffers + split-sum LUT; demodulation and re-modulation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .brdf import BrdfLut, f0_from, sample_lut
from .imagecore import FrameBundle, ImagePlane

EPS_MATERIAL = 1e-3


@dataclass(frozen=True)
class MaterialComponent:
    f_beta: ImagePlane
    epsilon: float = EPS_MATERIAL

    @property
    def data(self):
        return self.f_beta.data


def _arr(x):
    if isinstance(x, (ImagePlane, MaterialComponent)):
        return x.data
    return np.asarray(x, dtype=np.float32)


def material_response(albedo, metallic, roughness, nov, hit, lut: BrdfLut, eps=EPS_MATERIAL):
    """F = (1-m) c + f0 A(n.v, a) + B(n.v, a), array form. Shapes: albedo (3,H,W), others (H,W)."""
    a, b = sample_lut(lut, nov, roughness)
    m = metallic.astype(np.float64)
    c = albedo.astype(np.float64)
    f0 = f0_from(c.transpose(1, 2, 0), m).transpose(2, 0, 1)
    f = (1.0 - m) * c + f0 * a + b
    f = np.maximum(f, eps)
    return np.where(hit, f, 1.0).astype(np.float32)


def material_component(frame: FrameBundle, lut: BrdfLut, eps=EPS_MATERIAL) -> MaterialComponent:
    for name in ("albedo", "metallic", "roughness", "nov", "depth"):
        if getattr(frame, name, None) is None:
            raise ValueError(f"frame is missing the {name} plane")
    hit = np.isfinite(frame.depth.data[0])
    f = material_response(frame.albedo.data, frame.metallic.data[0], frame.roughness.data[0],
                          frame.nov.data[0], hit, lut, eps)
    return MaterialComponent(ImagePlane(f, "linear-radiance"), eps)


def demodulate(radiance, material) -> ImagePlane:
    """Lighting component I = L / F (F is already clamped)."""
    L, F = _arr(radiance), _arr(material)
    if L.shape != F.shape:
        raise ValueError(f"radiance {L.shape} and material {F.shape} differ")
    return ImagePlane(L / F)


def remodulate(lighting, material) -> ImagePlane:
    I, F = _arr(lighting), _arr(material)
    if I.shape != F.shape:
        raise ValueError(f"lighting {I.shape} and material {F.shape} differ")
    return ImagePlane(np.maximum(I, 0.0) * F)


def total_variation(x) -> float:
    """Anisotropic TV, mean absolute forward difference over both axes."""
    a = _arr(x).astype(np.float64)
    return float(np.abs(np.diff(a, axis=-1)).mean() + np.abs(np.diff(a, axis=-2)).mean())
