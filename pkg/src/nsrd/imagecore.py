"""Float raster buffers, counter-based RNG and the on-disk formats (PFM, NSRD blobs).

Planes are channel-planar: ``data`` has shape ``(channels, height, width)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TAGS = ("linear-radiance", "unit-normal", "depth", "vector2", "scalar", "mask")


class FormatError(ValueError):
    """Raised when a PFM file or tensor blob cannot be decoded."""


@dataclass(frozen=True)
class ImagePlane:
    data: np.ndarray
    tag: str = "linear-radiance"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise ValueError(f"plane data must be (C, H, W), got shape {data.shape}")
        if self.tag not in TAGS:
            raise ValueError(f"unknown colorspace tag {self.tag!r}")
        if self.tag == "unit-normal":
            norm = np.sqrt((data.astype(np.float64) ** 2).sum(axis=0))
            hit = norm > 0
            if np.any(np.abs(norm[hit] - 1.0) > 1e-3):
                raise ValueError("unit-normal plane has non-unit vectors")
        if self.tag == "mask" and not np.all((data == 0.0) | (data == 1.0)):
            raise ValueError("mask plane must contain only 0 and 1")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def hwc(self) -> np.ndarray:
        return np.ascontiguousarray(self.data.transpose(1, 2, 0))

    @classmethod
    def from_hwc(cls, arr, tag="linear-radiance") -> "ImagePlane":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[..., None]
        return cls(arr.transpose(2, 0, 1), tag)


@dataclass(frozen=True)
class FrameBundle:
    """All per-frame planes at a single resolution."""

    radiance: ImagePlane
    albedo: ImagePlane
    metallic: ImagePlane
    roughness: ImagePlane
    normal: ImagePlane
    depth: ImagePlane
    nov: ImagePlane
    tmv: ImagePlane | None = None
    dmv: ImagePlane | None = None
    frame_index: int = 0
    hit: np.ndarray | None = field(default=None, compare=False, repr=False)

    def planes(self) -> dict:
        names = ("radiance", "albedo", "metallic", "roughness", "normal", "depth", "nov", "tmv", "dmv")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    def __post_init__(self):
        sizes = {(p.height, p.width) for p in self.planes().values()}
        if len(sizes) != 1:
            raise ValueError(f"frame planes disagree on size: {sorted(sizes)}")

    @property
    def size(self):
        return self.radiance.width, self.radiance.height


# ---------------------------------------------------------------------------
# counter-based RNG

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class SeededRng:
    """Stateless uniform stream keyed by ``(seed, x, y, index, dim)``.

    Every draw is a hash of its key, so results do not depend on the order
    or the partitioning in which keys are evaluated.
    """

    seed: int

    def prefix(self, *keys) -> np.ndarray:
        """Hash state after absorbing the leading ``keys``; continue with :meth:`extend`."""
        with np.errstate(over="ignore"):
            h = _mix64(np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        return self.extend(h, *keys)

    @staticmethod
    def extend(h, *keys) -> np.ndarray:
        arrays = np.broadcast_arrays(np.asarray(h, np.uint64), *(np.asarray(k).astype(np.uint64) for k in keys))
        h = arrays[0]
        with np.errstate(over="ignore"):
            for key in arrays[1:]:
                h = _mix64(h ^ (key + _GOLDEN))
        return h

    @staticmethod
    def to_unit(h) -> np.ndarray:
        # 53 high bits -> double in [0, 1)
        return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    @staticmethod
    def uniform_pair32(h, index) -> tuple[np.ndarray, np.ndarray]:
        """Two float32 uniforms per ``index`` from one more hash round (high and low 32 bits)."""
        h, index = np.broadcast_arrays(np.asarray(h, np.uint64), np.asarray(index).astype(np.uint64))
        with np.errstate(over="ignore"):
            z = h ^ (index + _GOLDEN)
            z ^= z >> np.uint64(30)
            z *= _M1
            z ^= z >> np.uint64(27)
            z *= _M2
            z ^= z >> np.uint64(31)
        scale = np.float32(2.0 ** -32)
        hi = (z >> np.uint64(32)).astype(np.float32) * scale
        lo = (z & np.uint64(0xFFFFFFFF)).astype(np.float32) * scale
        # float32 rounding can reach 1.0
        return np.minimum(hi, np.float32(1 - 2 ** -24)), np.minimum(lo, np.float32(1 - 2 ** -24))

    def uniform(self, x, y, index, dim=0) -> np.ndarray:
        return self.to_unit(self.prefix(x, y, index, dim))

    def child(self, salt: int) -> "SeededRng":
        with np.errstate(over="ignore"):
            s = _mix64(np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF) ^ _mix64(np.uint64(salt) + _GOLDEN))
        return SeededRng(int(s))


# ---------------------------------------------------------------------------
# PFM

def write_pfm(plane: ImagePlane, path) -> None:
    if plane.channels not in (1, 3):
        raise FormatError(f"PFM holds 1 or 3 channels, plane has {plane.channels}")
    header = "Pf" if plane.channels == 1 else "PF"
    # PFM stores rows bottom-up, pixels interleaved
    rows = plane.hwc()[::-1].astype("<f4")
    with open(path, "wb") as f:
        f.write(f"{header}\n{plane.width} {plane.height}\n-1.0\n".encode("ascii"))
        f.write(rows.tobytes())


def _read_token_line(f) -> str:
    line = f.readline()
    if not line.endswith(b"\n"):
        raise FormatError("truncated PFM header")
    return line.decode("ascii", errors="replace").strip()


def read_pfm(path, tag="linear-radiance") -> ImagePlane:
    with open(path, "rb") as f:
        kind = _read_token_line(f)
        if kind == "PF":
            channels = 3
        elif kind == "Pf":
            channels = 1
        else:
            raise FormatError(f"malformed PFM header {kind!r}")
        dims = _read_token_line(f).split()
        if len(dims) != 2:
            raise FormatError(f"malformed PFM dimensions line {dims!r}")
        width, height = int(dims[0]), int(dims[1])
        try:
            scale = float(_read_token_line(f))
        except ValueError as exc:
            raise FormatError("malformed PFM scale line") from exc
        if scale >= 0:
            raise FormatError("big-endian PFM (positive scale) is not supported")
        payload = f.read()
    count = width * height * channels
    if len(payload) < 4 * count:
        raise FormatError(f"truncated PFM payload: {len(payload)} bytes, need {4 * count}")
    arr = np.frombuffer(payload[: 4 * count], dtype="<f4").reshape(height, width, channels)
    return ImagePlane.from_hwc(arr[::-1], tag)


# ---------------------------------------------------------------------------
# NSRD tensor blob

BLOB_MAGIC = b"NSRD"
BLOB_VERSION = 1


def write_tensor_blob(array, path) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.float32:
        raise FormatError(f"tensor blobs store float32, got {arr.dtype}")
    if arr.ndim > 4:
        raise FormatError(f"tensor blobs hold at most 4 dims, got {arr.ndim}")
    head = BLOB_MAGIC + struct.pack(f"<II{arr.ndim}I", BLOB_VERSION, arr.ndim, *arr.shape)
    with open(path, "wb") as f:
        f.write(head)
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor_blob(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != BLOB_MAGIC:
        raise FormatError("bad magic")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != BLOB_VERSION:
        raise FormatError(f"version mismatch: {version}")
    if ndim > 4 or len(raw) < 12 + 4 * ndim:
        raise FormatError("bad dims header")
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    offset = 12 + 4 * ndim
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    if len(raw) - offset != expected:
        raise FormatError(f"size mismatch: payload {len(raw) - offset} bytes, dims need {expected}")
    return np.frombuffer(raw, dtype="<f4", offset=offset).reshape(dims).astype(np.float32)


# ---------------------------------------------------------------------------
# resampling and previews

def box_downsample(plane: ImagePlane, factor: int) -> ImagePlane:
    c, h, w = plane.shape
    if h % factor or w % factor:
        raise ValueError(f"{w}x{h} is not divisible by {factor}")
    blocks = plane.data.astype(np.float64).reshape(c, h // factor, factor, w // factor, factor)
    return ImagePlane(blocks.mean(axis=(2, 4)), plane.tag)


def tonemap_png(plane: ImagePlane, path) -> None:
    """8-bit preview: clamp(x^(1/2.2)) * 255, rounded half-up. Never read back."""
    from PIL import Image

    x = np.clip(plane.hwc().astype(np.float64), 0.0, None) ** (1.0 / 2.2)
    x = np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    if x.shape[2] == 1:
        x = x[..., 0]
    Image.fromarray(x).save(path)
