"""Per-voxel feature vectors: position, intensity, gradient magnitude and
second derivative, each normalized to [0, 1].

Channel layout is fixed: (px, py, pz, intensity, grad_mag, second_deriv).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfBoundsError
from .volume import Volume

N_CHANNELS = 6
DEFAULT_CHANNEL_WEIGHTS = (0.5, 0.5, 0.5, 1.0, 1.0, 1.0)
CHANNEL_NAMES = ("px", "py", "pz", "intensity", "grad_mag", "second_deriv")


@dataclass(frozen=True)
class FeatureField:
    """One 6-vector per voxel, x-fastest order, all channels in [0, 1]."""

    volume_dims: tuple[int, int, int]
    vectors: np.ndarray  # float64, shape (n_voxels, 6)
    norm_bounds: tuple[tuple[float, float], ...]  # per-channel (min, max)
    weights: np.ndarray  # float64, shape (6,), channel scales for distances

    def __post_init__(self):
        nx, ny, nz = self.volume_dims
        if self.vectors.shape != (nx * ny * nz, N_CHANNELS):
            raise ValueError(f"bad vectors shape {self.vectors.shape}")
        if self.weights.shape != (N_CHANNELS,):
            raise ValueError("need 6 channel weights")
        if np.any(self.weights < 0) or not np.any(self.weights > 0):
            raise ValueError("weights must be >= 0 with at least one > 0")

    @property
    def n_voxels(self) -> int:
        return self.vectors.shape[0]


def _check_index(volume: Volume, index: tuple[int, int, int]) -> None:
    nx, ny, nz = volume.dims
    x, y, z = index
    if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
        raise IndexOutOfBoundsError(f"index {index} outside dims {volume.dims}")


def _axis_diff(grid: np.ndarray, axis: int) -> np.ndarray:
    """Central differences inside, one-sided at the two boundary slabs."""
    out = np.empty_like(grid)
    n = grid.shape[axis]
    sl = lambda a, b: tuple(
        slice(a, b) if ax == axis else slice(None) for ax in range(3)
    )
    out[sl(1, n - 1)] = (grid[sl(2, n)] - grid[sl(0, n - 2)]) / 2.0
    out[sl(0, 1)] = grid[sl(1, 2)] - grid[sl(0, 1)]
    out[sl(n - 1, n)] = grid[sl(n - 1, n)] - grid[sl(n - 2, n - 1)]
    return out


def _axis_second(grid: np.ndarray, axis: int) -> np.ndarray:
    """f(i+1) - 2 f(i) + f(i-1); boundary slabs contribute 0."""
    out = np.zeros_like(grid)
    n = grid.shape[axis]
    sl = lambda a, b: tuple(
        slice(a, b) if ax == axis else slice(None) for ax in range(3)
    )
    if n >= 3:
        out[sl(1, n - 1)] = grid[sl(2, n)] - 2.0 * grid[sl(1, n - 1)] + grid[sl(0, n - 2)]
    return out


def gradient_grid(volume: Volume) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(gx, gy, gz) grids shaped (nz, ny, nx), intensity per voxel step."""
    grid = volume.as_grid()
    return _axis_diff(grid, 2), _axis_diff(grid, 1), _axis_diff(grid, 0)


def second_derivative_grid(volume: Volume) -> np.ndarray:
    """|Laplacian| grid shaped (nz, ny, nx)."""
    grid = volume.as_grid()
    lap = _axis_second(grid, 2) + _axis_second(grid, 1) + _axis_second(grid, 0)
    return np.abs(lap)


def gradient(volume: Volume, index: tuple[int, int, int]) -> tuple[float, float, float]:
    """Finite-difference gradient at one voxel (central inside, one-sided
    at boundaries)."""
    _check_index(volume, index)
    grid = volume.as_grid()
    x, y, z = index
    nx, ny, nz = volume.dims

    def diff(coord, n, take):
        if 0 < coord < n - 1:
            return (take(coord + 1) - take(coord - 1)) / 2.0
        if coord == 0:
            return take(1) - take(0)
        return take(n - 1) - take(n - 2)

    gx = diff(x, nx, lambda i: grid[z, y, i])
    gy = diff(y, ny, lambda j: grid[z, j, x])
    gz = diff(z, nz, lambda k: grid[k, y, x])
    return float(gx), float(gy), float(gz)


def second_derivative(volume: Volume, index: tuple[int, int, int]) -> float:
    """|Laplacian| at one voxel; boundary axes contribute zero."""
    _check_index(volume, index)
    grid = volume.as_grid()
    x, y, z = index
    nx, ny, nz = volume.dims
    lap = 0.0
    if 0 < x < nx - 1:
        lap += grid[z, y, x + 1] - 2.0 * grid[z, y, x] + grid[z, y, x - 1]
    if 0 < y < ny - 1:
        lap += grid[z, y + 1, x] - 2.0 * grid[z, y, x] + grid[z, y - 1, x]
    if 0 < z < nz - 1:
        lap += grid[z + 1, y, x] - 2.0 * grid[z, y, x] + grid[z - 1, y, x]
    return float(abs(lap))


def _minmax_normalize(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.zeros_like(values), lo, hi
    return (values - lo) / (hi - lo), lo, hi


def build_feature_field(
    volume: Volume, weights: tuple[float, ...] = DEFAULT_CHANNEL_WEIGHTS
) -> FeatureField:
    """Assemble the 6-channel feature field for a whole volume.

    Coordinates are scaled by (dim-1); gradient magnitude and second
    derivative are min-max normalized over the volume; intensity is
    already in [0, 1] and passes through.
    """
    nx, ny, nz = volume.dims
    n = volume.meta.n_voxels
    vectors = np.empty((n, N_CHANNELS), dtype=np.float64)

    xs = np.arange(nx, dtype=np.float64) / (nx - 1)
    ys = np.arange(ny, dtype=np.float64) / (ny - 1)
    zs = np.arange(nz, dtype=np.float64) / (nz - 1)
    vectors[:, 0] = np.broadcast_to(xs, (nz, ny, nx)).reshape(-1)
    vectors[:, 1] = np.broadcast_to(ys[None, :, None], (nz, ny, nx)).reshape(-1)
    vectors[:, 2] = np.broadcast_to(zs[:, None, None], (nz, ny, nx)).reshape(-1)
    vectors[:, 3] = volume.intensities

    gx, gy, gz = gradient_grid(volume)
    gmag = np.sqrt(gx * gx + gy * gy + gz * gz).reshape(-1)
    del gx, gy, gz
    gnorm, glo, ghi = _minmax_normalize(gmag)
    vectors[:, 4] = gnorm
    del gmag, gnorm

    sd = second_derivative_grid(volume).reshape(-1)
    snorm, slo, shi = _minmax_normalize(sd)
    vectors[:, 5] = snorm
    del sd, snorm

    bounds = (
        (0.0, float(nx - 1)),
        (0.0, float(ny - 1)),
        (0.0, float(nz - 1)),
        (0.0, 1.0),
        (glo, ghi),
        (slo, shi),
    )
    vectors.setflags(write=False)
    w = np.asarray(weights, dtype=np.float64)
    w.setflags(write=False)
    return FeatureField(
        volume_dims=volume.dims, vectors=vectors, norm_bounds=bounds, weights=w
    )


def sample_features(
    field: FeatureField, stride: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Every stride-th voxel of a seeded shuffle: (voxel_ids, vectors).

    stride=1 keeps all voxels (in shuffled order); identical arguments
    always give identical selections.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(field.n_voxels)
    chosen = perm[::stride].astype(np.int64)
    return chosen, field.vectors[chosen]


def default_stride(n_voxels: int, target_samples: int = 50_000) -> int:
    """Stride putting the training subsample near target_samples voxels."""
    return max(1, round(n_voxels / target_samples))
