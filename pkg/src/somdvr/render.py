"""CPU raycasting of a color volume: perspective camera, trilinear RGBA
sampling, front-to-back compositing with opacity correction, PNG output.

The marching itself lives in the kernel backends; this module prepares
the camera basis in index space and encodes the result.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backend import kernels as _default_kernels
from .errors import DegenerateCameraError, IoFailureError
from .groups import ColorVolume
from .volume import Volume

_PARALLEL_EPS = 1e-12


@dataclass(frozen=True)
class Camera:
    """Perspective camera in world units (voxel index * spacing, mm)."""

    eye: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    vertical_fov: float = 40.0

    def __post_init__(self):
        if not 0.0 < self.vertical_fov < 180.0:
            raise DegenerateCameraError(f"fov {self.vertical_fov} outside (0, 180)")

    def to_dict(self) -> dict:
        return {
            "eye": list(self.eye),
            "look_at": list(self.look_at),
            "up": list(self.up),
            "vertical_fov": self.vertical_fov,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Camera":
        return cls(
            eye=tuple(float(v) for v in doc["eye"]),
            look_at=tuple(float(v) for v in doc["look_at"]),
            up=tuple(float(v) for v in doc.get("up", (0.0, 0.0, 1.0))),
            vertical_fov=float(doc.get("vertical_fov", 40.0)),
        )


@dataclass(frozen=True)
class RenderSettings:
    width: int = 512
    height: int = 512
    step: float = 0.5  # sampling step in voxel units
    early_stop_alpha: float = 0.99
    background: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")
        if self.step <= 0:
            raise ValueError(f"step must be > 0, got {self.step}")
        if not 0.0 < self.early_stop_alpha <= 1.0:
            raise ValueError(f"early_stop_alpha must be in (0, 1], got {self.early_stop_alpha}")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "step": self.step,
            "early_stop_alpha": self.early_stop_alpha,
            "background": list(self.background),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RenderSettings":
        kwargs = {}
        for key in ("width", "height"):
            if key in doc:
                kwargs[key] = int(doc[key])
        for key in ("step", "early_stop_alpha"):
            if key in doc:
                kwargs[key] = float(doc[key])
        if "background" in doc:
            kwargs["background"] = tuple(float(v) for v in doc["background"])
        return cls(**kwargs)


@dataclass(frozen=True)
class RenderedImage:
    width: int
    height: int
    pixels: np.ndarray  # uint8, (height, width, 4), row-major top-left origin


def camera_basis(camera: Camera) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal (right, up, forward) world-space basis."""
    eye = np.asarray(camera.eye, dtype=np.float64)
    look = np.asarray(camera.look_at, dtype=np.float64)
    up_hint = np.asarray(camera.up, dtype=np.float64)
    fwd = look - eye
    norm = np.linalg.norm(fwd)
    if norm < _PARALLEL_EPS:
        raise DegenerateCameraError("eye and look_at coincide")
    fwd = fwd / norm
    right = np.cross(fwd, up_hint)
    rnorm = np.linalg.norm(right)
    if rnorm < _PARALLEL_EPS:
        raise DegenerateCameraError("up is parallel to the view direction")
    right = right / rnorm
    true_up = np.cross(right, fwd)
    return right, true_up, fwd


def default_camera(volume: Volume) -> Camera:
    """A diagonal view framing the whole volume."""
    nx, ny, nz = volume.dims
    sx, sy, sz = volume.meta.spacing
    extent = np.array([nx * sx, ny * sy, nz * sz])
    center = extent / 2.0
    direction = np.array([1.0, -1.0, 0.6])
    direction /= np.linalg.norm(direction)
    eye = center + direction * float(np.linalg.norm(extent)) * 1.1
    return Camera(eye=tuple(eye), look_at=tuple(center), up=(0.0, 0.0, 1.0))


def raycast(
    color_volume: ColorVolume,
    volume: Volume,
    camera: Camera,
    settings: RenderSettings | None = None,
    kernels=_default_kernels,
    num_threads: int = 0,
) -> RenderedImage:
    """Render the color volume; a pure function of its arguments."""
    settings = settings or RenderSettings()
    right, up, fwd = camera_basis(camera)
    spacing = np.asarray(volume.meta.spacing, dtype=np.float64)
    # Index space: voxel i is centered at world (i + 0.5) * spacing, so
    # dividing by spacing and shifting half a voxel maps world to index.
    eye_idx = np.asarray(camera.eye, dtype=np.float64) / spacing - 0.5
    right_idx = right / spacing
    up_idx = up / spacing
    fwd_idx = fwd / spacing
    tanfov = math.tan(math.radians(camera.vertical_fov) / 2.0)
    aspect = settings.width / settings.height
    rgba = np.ascontiguousarray(color_volume.rgba, dtype=np.float32)
    pixels = kernels.raycast(
        rgba, color_volume.dims, eye_idx, right_idx, up_idx, fwd_idx,
        tanfov, aspect, settings.width, settings.height,
        settings.step, settings.early_stop_alpha,
        np.asarray(settings.background, dtype=np.float64), num_threads,
    )
    return RenderedImage(width=settings.width, height=settings.height, pixels=pixels)


def _chunk(tag: bytes, payload: bytes) -> bytes:
    data = tag + payload
    return struct.pack(">I", len(payload)) + data + struct.pack(">I", zlib.crc32(data))


def png_bytes(img: RenderedImage) -> bytes:
    """Minimal RGBA8 PNG with fixed encoder settings; identical images
    always produce identical bytes."""
    pixels = np.ascontiguousarray(img.pixels, dtype=np.uint8)
    if pixels.shape != (img.height, img.width, 4):
        raise ValueError(f"bad pixel buffer shape {pixels.shape}")
    ihdr = struct.pack(">IIBBBBB", img.width, img.height, 8, 6, 0, 0, 0)
    raw = b"".join(b"\x00" + pixels[row].tobytes() for row in range(img.height))
    return b"".join(
        [
            b"\x89PNG\r\n\x1a\n",
            _chunk(b"IHDR", ihdr),
            _chunk(b"IDAT", zlib.compress(raw, 6)),
            _chunk(b"IEND", b""),
        ]
    )


def write_png(img: RenderedImage, path: str | Path) -> None:
    try:
        Path(path).write_bytes(png_bytes(img))
    except OSError as exc:
        raise IoFailureError(f"cannot write PNG to {path}: {exc}") from exc


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNGs produced by png_bytes (RGBA8, filter 0) back to pixels."""
    if data[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError("not a PNG")
    pos = 8
    width = height = None
    idat = b""
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        tag = data[pos + 4:pos + 8]
        payload = data[pos + 8:pos + 8 + length]
        if tag == b"IHDR":
            width, height, depth, ctype = struct.unpack(">IIBB", payload[:10])
            if depth != 8 or ctype != 6:
                raise ValueError("decode_png only handles RGBA8")
        elif tag == b"IDAT":
            idat += payload
        pos += 12 + length
    raw = zlib.decompress(idat)
    stride = width * 4 + 1
    rows = []
    for r in range(height):
        line = raw[r * stride:(r + 1) * stride]
        if line[0] != 0:
            raise ValueError("decode_png only handles filter 0")
        rows.append(np.frombuffer(line[1:], dtype=np.uint8))
    return np.stack(rows).reshape(height, width, 4)
