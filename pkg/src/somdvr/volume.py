"""3D scalar volumes: RAW + JSON sidecar ingestion and synthetic phantoms.

Volumes store min-max normalized intensities in [0, 1] as a flat float64
array in x-fastest order (index = x + nx*(y + ny*z)).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoFailureError, SizeMismatchError, UnsupportedDepthError

_DTYPES = {
    (8, "little"): np.dtype("u1"),
    (8, "big"): np.dtype("u1"),
    (16, "little"): np.dtype("<u2"),
    (16, "big"): np.dtype(">u2"),
}


@dataclass(frozen=True)
class VolumeMeta:
    """Geometry and sample format of a raw scalar volume."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    bits_per_sample: int = 8
    byte_order: str = "little"
    source_path: str = ""

    def __post_init__(self):
        nx, ny, nz = self.dims
        if min(nx, ny, nz) < 2:
            raise ValueError(f"dims must all be >= 2, got {self.dims}")
        if min(self.spacing) <= 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if self.bits_per_sample not in (8, 16):
            raise UnsupportedDepthError(
                f"bits_per_sample must be 8 or 16, got {self.bits_per_sample}"
            )
        if self.byte_order not in ("little", "big"):
            raise ValueError(f"byte_order must be little|big, got {self.byte_order!r}")

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz


@dataclass(frozen=True)
class Volume:
    """Normalized scalar field plus the raw extremes it was scaled from."""

    meta: VolumeMeta
    intensities: np.ndarray  # float64, shape (n_voxels,), values in [0, 1]
    raw_min: float
    raw_max: float
    labels: np.ndarray | None = field(default=None, compare=False)  # test fixtures only

    def __post_init__(self):
        if self.intensities.shape != (self.meta.n_voxels,):
            raise SizeMismatchError(
                f"expected {self.meta.n_voxels} voxels, got {self.intensities.shape}"
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.meta.dims

    def as_grid(self) -> np.ndarray:
        """View shaped (nz, ny, nx) so the x axis is fastest in memory."""
        nx, ny, nz = self.meta.dims
        return self.intensities.reshape(nz, ny, nx)


def _normalize(raw: np.ndarray) -> tuple[np.ndarray, float, float]:
    raw_min = float(raw.min())
    raw_max = float(raw.max())
    if raw_max == raw_min:
        return np.zeros(raw.shape, dtype=np.float64), raw_min, raw_max
    out = (raw.astype(np.float64) - raw_min) / (raw_max - raw_min)
    return out, raw_min, raw_max


def load_raw(meta: VolumeMeta, data: bytes) -> Volume:
    """Decode raw sample bytes and min-max normalize them.

    Raises SizeMismatchError if the byte count disagrees with the dims,
    UnsupportedDepthError for sample depths other than 8/16 bit.
    """
    if meta.bits_per_sample not in (8, 16):
        raise UnsupportedDepthError(f"unsupported depth {meta.bits_per_sample}")
    dtype = _DTYPES[(meta.bits_per_sample, meta.byte_order)]
    expected = meta.n_voxels * dtype.itemsize
    if len(data) != expected:
        raise SizeMismatchError(
            f"raw payload is {len(data)} bytes, dims {meta.dims} at "
            f"{meta.bits_per_sample}-bit require {expected}"
        )
    raw = np.frombuffer(data, dtype=dtype)
    intensities, raw_min, raw_max = _normalize(raw)
    intensities.setflags(write=False)
    return Volume(meta=meta, intensities=intensities, raw_min=raw_min, raw_max=raw_max)


def to_raw_bytes(volume: Volume) -> bytes:
    """Inverse of load_raw: de-normalize back to integer samples."""
    meta = volume.meta
    dtype = _DTYPES[(meta.bits_per_sample, meta.byte_order)]
    raw = volume.intensities * (volume.raw_max - volume.raw_min) + volume.raw_min
    return np.round(raw).astype(dtype).tobytes()


def read_sidecar(meta_path: str | Path) -> VolumeMeta:
    """Parse the JSON sidecar ({"dims", "spacing", "bits", "byte_order"})."""
    path = Path(meta_path)
    if not path.is_file():
        raise IoFailureError(f"sidecar not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise IoFailureError(f"sidecar {path} is not valid JSON: {exc}") from exc
    try:
        dims = tuple(int(v) for v in doc["dims"])
        spacing = tuple(float(v) for v in doc.get("spacing", (1.0, 1.0, 1.0)))
        bits = int(doc.get("bits", 8))
        byte_order = str(doc.get("byte_order", "little"))
    except (KeyError, TypeError, ValueError) as exc:
        raise IoFailureError(f"sidecar {path} missing/malformed fields: {exc}") from exc
    if len(dims) != 3 or len(spacing) != 3:
        raise IoFailureError(f"sidecar {path}: dims and spacing must have 3 entries")
    return VolumeMeta(
        dims=dims,
        spacing=spacing,
        bits_per_sample=bits,
        byte_order=byte_order,
        source_path=str(path),
    )


def write_sidecar(meta: VolumeMeta, meta_path: str | Path) -> None:
    doc = {
        "dims": list(meta.dims),
        "spacing": list(meta.spacing),
        "bits": meta.bits_per_sample,
        "byte_order": meta.byte_order,
    }
    Path(meta_path).write_text(json.dumps(doc) + "\n")


def load_raw_file(raw_path: str | Path, meta_path: str | Path | None = None) -> Volume:
    """Load a .raw volume with its .json sidecar (defaults to <raw>.json)."""
    raw_path = Path(raw_path)
    if meta_path is None:
        meta_path = raw_path.with_suffix(".json")
    meta = read_sidecar(meta_path)
    if not raw_path.is_file():
        raise IoFailureError(f"raw volume not found: {raw_path}")
    meta = VolumeMeta(
        dims=meta.dims,
        spacing=meta.spacing,
        bits_per_sample=meta.bits_per_sample,
        byte_order=meta.byte_order,
        source_path=str(raw_path),
    )
    return load_raw(meta, raw_path.read_bytes())


def save_raw_file(volume: Volume, raw_path: str | Path) -> None:
    raw_path = Path(raw_path)
    raw_path.write_bytes(to_raw_bytes(volume))
    write_sidecar(volume.meta, raw_path.with_suffix(".json"))


def _phantom_volume(
    meta: VolumeMeta,
    values: np.ndarray,
    raw_min: float = 0.0,
    raw_max: float = 1.0,
    labels: np.ndarray | None = None,
) -> Volume:
    # Phantom generators author values directly in normalized units; the
    # recorded raw range is the generator's declared scale, not observed
    # extremes.
    values = np.ascontiguousarray(values, dtype=np.float64).reshape(-1)
    values.setflags(write=False)
    return Volume(
        meta=meta, intensities=values, raw_min=raw_min, raw_max=raw_max, labels=labels
    )


def make_phantom(kind: str, dims: tuple[int, int, int] = (16, 16, 16), **kwargs) -> Volume:
    """Deterministic synthetic volumes for tests and benchmarks.

    kinds:
      constant      value=v          every voxel at intensity v
      ramp-x        -                raw value = x index, min-max normalized
      two-blobs     i1=, i2=         two disjoint boxes on a 0.0 background;
                                     per-voxel labels (0 bg, 1, 2) attached
      quadratic-x   a=               intensity a*x^2 (requires a*(nx-1)^2 <= 1)
    """
    nx, ny, nz = dims
    meta = VolumeMeta(dims=dims, source_path=f"phantom:{kind}")
    if kind == "constant":
        v = float(kwargs.get("value", 0.5))
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"constant value must be in [0,1], got {v}")
        return _phantom_volume(meta, np.full(meta.n_voxels, v))
    if kind == "ramp-x":
        x = np.arange(nx, dtype=np.float64)
        grid = np.broadcast_to(x, (nz, ny, nx))
        values, raw_min, raw_max = _normalize(grid.reshape(-1))
        return _phantom_volume(meta, values, raw_min=raw_min, raw_max=raw_max)
    if kind == "two-blobs":
        i1 = float(kwargs.get("i1", 0.2))
        i2 = float(kwargs.get("i2", 0.9))
        grid = np.zeros((nz, ny, nx), dtype=np.float64)
        labels = np.zeros((nz, ny, nx), dtype=np.int8)
        # Boxes sized relative to dims: each spans ~1/3 of x, centered in y/z.
        x1 = slice(nx // 8, nx // 8 + max(2, (nx * 5) // 16))
        x2 = slice(nx - nx // 8 - max(2, (nx * 5) // 16), nx - nx // 8)
        yz = slice(ny // 4, ny - ny // 4)
        grid[yz, yz, x1] = i1
        grid[yz, yz, x2] = i2
        labels[yz, yz, x1] = 1
        labels[yz, yz, x2] = 2
        return _phantom_volume(meta, grid.reshape(-1), labels=labels.reshape(-1))
    if kind == "quadratic-x":
        a = float(kwargs.get("a", 0.01))
        if a < 0 or a * (nx - 1) ** 2 > 1.0:
            raise ValueError(f"quadratic-x needs 0 <= a*(nx-1)^2 <= 1, got a={a}")
        x = np.arange(nx, dtype=np.float64)
        grid = np.broadcast_to(a * x * x, (nz, ny, nx))
        return _phantom_volume(meta, grid.reshape(-1))
    raise ValueError(f"unknown phantom kind {kind!r}")


def make_demo_ct(dims: tuple[int, int, int] = (256, 256, 256)) -> Volume:
    """Deterministic CT-like phantom: dense rod structures inside a soft
    tissue ellipsoid, for end-to-end runs when no scanner data is on disk.
    """
    nx, ny, nz = dims
    meta = VolumeMeta(dims=dims, source_path="phantom:demo-ct")
    zc, yc, xc = np.meshgrid(
        np.linspace(-1, 1, nz), np.linspace(-1, 1, ny), np.linspace(-1, 1, nx),
        indexing="ij",
    )
    grid = np.zeros((nz, ny, nx), dtype=np.float64)
    # soft tissue envelope
    tissue = (xc / 0.85) ** 2 + (yc / 0.62) ** 2 + (zc / 0.55) ** 2 <= 1.0
    grid[tissue] = 0.32
    # five dense rods fanning out along x, like long bones
    for k, (y0, z0, y1, z1, r) in enumerate(
        [
            (-0.42, -0.10, -0.34, 0.12, 0.085),
            (-0.21, -0.16, -0.17, 0.10, 0.09),
            (0.00, -0.18, 0.00, 0.09, 0.095),
            (0.21, -0.16, 0.17, 0.10, 0.09),
            (0.42, -0.10, 0.34, 0.12, 0.085),
        ]
    ):
        t = (xc + 0.7) / 1.4  # 0 at heel, 1 at toes
        yl = y0 + (y1 - y0) * t
        zl = z0 + (z1 - z0) * t
        rod = ((yc - yl) ** 2 + (zc - zl) ** 2 <= r * r) & (np.abs(xc) <= 0.7)
        grid[rod] = 0.88 + 0.02 * k
    return _phantom_volume(meta, grid.reshape(-1))
