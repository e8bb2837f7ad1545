"""Microfacet BRDF (Lambert + GGX/Schlick/Smith-Schlick) and split-sum pre-integration.

Vectors are numpy arrays with the xyz axis last; every function broadcasts.
The LUT grid is indexed ``[i_nov, j_roughness, {A, B}]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import SeededRng, read_tensor_blob, write_tensor_blob

MIN_ROUGHNESS = 1e-3
MIN_NOV = 1e-3
DIELECTRIC_F0 = 0.04


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _normalize(v):
    return v / np.sqrt(_dot(v, v))[..., None]


def f0_from(albedo, metallic):
    """Specular reflectance at normal incidence: lerp(0.04, c, m)."""
    m = np.asarray(metallic)[..., None] if np.ndim(metallic) else metallic
    return DIELECTRIC_F0 + (np.asarray(albedo) - DIELECTRIC_F0) * m


@dataclass
class ShadingPoint:
    n: np.ndarray
    v: np.ndarray
    albedo: np.ndarray
    metallic: float | np.ndarray
    roughness: float | np.ndarray

    @property
    def f0(self):
        return f0_from(self.albedo, self.metallic)


def ggx_ndf(noh, alpha):
    a2 = np.asarray(alpha, dtype=np.float64) ** 2
    d = np.asarray(noh, dtype=np.float64) ** 2 * (a2 - 1.0) + 1.0
    return a2 / (np.pi * d * d)


def fresnel_schlick(voh, f0):
    voh = np.asarray(voh, dtype=np.float64)
    f0 = np.asarray(f0, dtype=np.float64)
    if f0.ndim and f0.shape[-1] == 3 and voh.ndim:
        voh = voh[..., None]
    return f0 + (1.0 - f0) * (1.0 - voh) ** 5


def smith_k(alpha):
    return (np.asarray(alpha, dtype=np.float64) + 1.0) ** 2 / 8.0


def smith_g1(x, k):
    return x / (x * (1.0 - k) + k)


def smith_g(nol, nov, alpha):
    k = smith_k(alpha)
    return smith_g1(np.asarray(nol, dtype=np.float64), k) * smith_g1(np.asarray(nov, dtype=np.float64), k)


def eval_brdf(point: ShadingPoint, wi, split=False):
    """rho = (1-m) c/pi + D F G / (4 (n.wo)(n.wi)).

    With ``split=True`` returns the (diffuse, specular) pair instead of the sum.
    """
    n, v = np.asarray(point.n, float), np.asarray(point.v, float)
    wi = np.asarray(wi, float)
    alpha = np.maximum(np.asarray(point.roughness, float), MIN_ROUGHNESS)
    m = np.asarray(point.metallic, float)
    h = _normalize(v + wi)
    nol = np.clip(_dot(n, wi), 0.0, 1.0)
    nov = np.clip(_dot(n, v), 0.0, 1.0)
    noh = np.clip(_dot(n, h), 0.0, 1.0)
    voh = np.clip(_dot(v, h), 0.0, 1.0)
    diffuse = (1.0 - m)[..., None] * np.asarray(point.albedo, float) / np.pi
    spec_scalar = ggx_ndf(noh, alpha) * smith_g(nol, nov, alpha) / np.maximum(4.0 * nov * nol, 1e-6)
    specular = fresnel_schlick(voh, point.f0) * spec_scalar[..., None]
    if split:
        return diffuse, specular
    return diffuse + specular


def tangent_frame(n):
    """Orthonormal (t, b) completing ``n`` (branchless construction of Duff et al.)."""
    n = np.asarray(n, float)
    sign = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], axis=-1)
    bt = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t, bt


def sample_ggx(u1, u2, alpha, wo, n):
    """Draw a half vector with pdf D(h)(n.h) and reflect ``wo`` about it.

    Returns ``(wi, wh)``.
    """
    alpha = np.maximum(np.asarray(alpha, float), MIN_ROUGHNESS)
    u1 = np.asarray(u1, float)
    a2 = alpha * alpha
    cos_t = np.sqrt((1.0 - u1) / (1.0 + (a2 - 1.0) * u1))
    sin_t = np.sqrt(np.maximum(1.0 - cos_t * cos_t, 0.0))
    phi = 2.0 * np.pi * np.asarray(u2, float)
    t, b = tangent_frame(n)
    n = np.asarray(n, float)
    h = (t * (sin_t * np.cos(phi))[..., None] + b * (sin_t * np.sin(phi))[..., None]
         + n * cos_t[..., None])
    h = _normalize(h)
    wo = np.asarray(wo, float)
    wi = 2.0 * _dot(wo, h)[..., None] * h - wo
    return _normalize(wi), h


def _stratified_uniforms(rng: SeededRng, i, j, spp):
    """float32 (u1, u2) for samples 0..spp-1 of texel (i, j); jittered strata when spp is square."""
    s = np.arange(spp)
    h = rng.prefix(np.asarray(i)[..., None], np.asarray(j)[..., None])
    r1, r2 = rng.uniform_pair32(h, s)
    m = int(round(np.sqrt(spp)))
    if m * m == spp:
        r1 = ((s // m).astype(np.float32) + r1) / np.float32(m)
        r2 = ((s % m).astype(np.float32) + r2) / np.float32(m)
    # u1 == 1 would put the half vector on the horizon (cos_h = 0)
    return np.minimum(r1, np.float32(1 - 2 ** -24)), r2


def split_sum_estimate(nov, alpha, u1, u2):
    """Mean of the per-sample A/B weights over the last axis of ``u1``/``u2`` (float32 math)."""
    f = np.float32
    nov = np.maximum(np.asarray(nov, float), MIN_NOV).astype(f)[..., None]
    alpha = np.maximum(np.asarray(alpha, float), MIN_ROUGHNESS).astype(f)[..., None]
    u1 = np.asarray(u1, f)
    u2 = np.asarray(u2, f)
    a2 = alpha * alpha
    cos2_h = (1 - u1) / (1 + (a2 - 1) * u1)
    cos_h = np.sqrt(cos2_h)
    hx = np.sqrt(np.maximum(1 - cos2_h, 0)) * np.cos(f(2 * np.pi) * u2)
    # n = +z, v = (sin_o, 0, cos_o)
    sin_o = np.sqrt(1 - nov * nov)
    voh = sin_o * hx + nov * cos_h
    nol = np.maximum(2 * voh * cos_h - nov, 0)
    k = smith_k(alpha).astype(f)
    # G1(nol) vanishes for nol <= 0, which drops below-horizon samples
    weight = smith_g1(nol, k) * (smith_g1(nov, k) * voh / (cos_h * nov))
    fc = (1 - np.clip(voh, 0, 1)) ** 5
    total = weight.mean(axis=-1, dtype=np.float64)
    b = (fc * weight).mean(axis=-1, dtype=np.float64)
    return total - b, b


def integrate_split_sum(nov, alpha, spp, rng: SeededRng, texel=(0, 0)):
    """Monte-Carlo (A, B) for one (n.v, roughness) pair; ``texel`` keys the RNG stream."""
    u1, u2 = _stratified_uniforms(rng, texel[0], texel[1], spp)
    a, b = split_sum_estimate(nov, alpha, u1, u2)
    return float(a), float(b)


@dataclass(frozen=True)
class BrdfLut:
    grid: np.ndarray
    spp: int = 0

    @property
    def resolution(self) -> int:
        return self.grid.shape[0]

    def save(self, path):
        write_tensor_blob(self.grid.astype(np.float32), path)

    @classmethod
    def load(cls, path, spp=0) -> "BrdfLut":
        grid = read_tensor_blob(path)
        if grid.ndim != 3 or grid.shape[2] != 2 or grid.shape[0] != grid.shape[1]:
            raise ValueError(f"not a LUT blob: dims {grid.shape}")
        return cls(grid, spp)


def texel_centers(resolution):
    c = (np.arange(resolution) + 0.5) / resolution
    return np.maximum(c, MIN_NOV), np.maximum(c, MIN_ROUGHNESS)


def build_lut(resolution=512, spp=1024, seed=0, rows_per_chunk=None) -> BrdfLut:
    """Tabulate (A, B) at texel centres: axis 0 is n.v, axis 1 is roughness."""
    if resolution < 2:
        raise ValueError("LUT resolution must be >= 2")
    rng = SeededRng(seed)
    novs, alphas = texel_centers(resolution)
    grid = np.empty((resolution, resolution, 2), dtype=np.float32)
    if rows_per_chunk is None:
        rows_per_chunk = max(1, (1 << 21) // (resolution * spp))
    jj = np.arange(resolution)
    for start in range(0, resolution, rows_per_chunk):
        ii = np.arange(start, min(start + rows_per_chunk, resolution))
        I, J = np.meshgrid(ii, jj, indexing="ij")
        u1, u2 = _stratified_uniforms(rng, I, J, spp)
        a, b = split_sum_estimate(novs[I], alphas[J], u1, u2)
        grid[ii, :, 0] = a
        grid[ii, :, 1] = b
    return BrdfLut(grid, spp)


def sample_lut(lut: BrdfLut, nov, alpha):
    """Bilinear lookup over texel centres with clamp-to-edge addressing. Returns (A, B)."""
    res = lut.resolution
    x = np.clip(np.asarray(nov, float) * res - 0.5, 0.0, res - 1.0)
    y = np.clip(np.asarray(alpha, float) * res - 0.5, 0.0, res - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), res - 2)
    y0 = np.minimum(np.floor(y).astype(np.int64), res - 2)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    g = lut.grid.astype(np.float64)
    top = g[x0, y0] * (1 - fy) + g[x0, y0 + 1] * fy
    bot = g[x0 + 1, y0] * (1 - fy) + g[x0 + 1, y0 + 1] * fy
    out = top * (1 - fx) + bot * fx
    return out[..., 0], out[..., 1]
