"""Competitive training, BMU queries, map quality metrics, U-matrix and
full-volume assignment for the spherical lattice.

All distances are weighted Euclidean: each channel difference is scaled
by the feature field's channel weight before squaring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import kernels as _default_kernels
from .errors import EmptySampleSetError
from .features import DEFAULT_CHANNEL_WEIGHTS, FeatureField
from .lattice import SphericalLattice, TrainingParams

# Full M x M neighborhood tables above this node count would not fit in
# memory; larger lattices fall back to on-demand rows.
TABLE_MAX_NODES = 4200


@dataclass(frozen=True)
class UMatrix:
    """Per-node mean weighted distance to lattice neighbors."""

    values: np.ndarray  # float64, (n_nodes,)
    normalized: np.ndarray  # float64, (n_nodes,), min-max over nodes


@dataclass(frozen=True)
class VoxelAssignment:
    """BMU per voxel plus the inverse node -> voxel map (CSR layout)."""

    bmu_of_voxel: np.ndarray  # int32, (n_voxels,)
    node_offsets: np.ndarray  # int64, (n_nodes + 1,)
    member_voxels: np.ndarray  # int64, (n_voxels,), grouped by node

    @property
    def n_nodes(self) -> int:
        return len(self.node_offsets) - 1

    def members_of_node(self, node_id: int) -> np.ndarray:
        return self.member_voxels[self.node_offsets[node_id]:self.node_offsets[node_id + 1]]

    def members_of_nodes(self, node_ids) -> np.ndarray:
        parts = [self.members_of_node(int(n)) for n in node_ids]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(parts)


def _scales(channel_weights) -> np.ndarray:
    w = np.ascontiguousarray(channel_weights, dtype=np.float64)
    if w.shape != (6,):
        raise ValueError("need 6 channel weights")
    return w


def _samples_array(samples) -> np.ndarray:
    arr = np.ascontiguousarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise ValueError(f"samples must be (n, 6), got {arr.shape}")
    if arr.shape[0] == 0:
        raise EmptySampleSetError("no samples")
    return arr


def bmu(
    lattice: SphericalLattice,
    vector,
    channel_weights=DEFAULT_CHANNEL_WEIGHTS,
    kernels=_default_kernels,
) -> tuple[int, float]:
    """Closest node in weighted Euclidean distance; ties to lowest id."""
    v = np.ascontiguousarray(vector, dtype=np.float64).reshape(1, 6)
    ids, d2 = kernels.assign_bmu(lattice.weights, v, _scales(channel_weights))
    return int(ids[0]), float(np.sqrt(d2[0]))


def train(
    lattice: SphericalLattice,
    samples,
    params: TrainingParams,
    channel_weights=DEFAULT_CHANNEL_WEIGHTS,
    kernels=_default_kernels,
) -> SphericalLattice:
    """Online SOM training, in place; deterministic for fixed seeds.

    Per epoch t, every sample (in a seeded shuffled order) pulls all node
    weights toward it with step eta(t) * exp(-geo^2 / (2 sigma(t)^2)).
    """
    samples = _samples_array(samples)
    scales = _scales(channel_weights)
    rng = np.random.default_rng(params.seed)
    weights = np.ascontiguousarray(lattice.weights)

    use_table = lattice.n_nodes <= TABLE_MAX_NODES
    if use_table:
        d2_geo = lattice.geodesic_distances()
        np.multiply(d2_geo, d2_geo, out=d2_geo)
    positions = np.ascontiguousarray(lattice.positions)

    for epoch in range(params.epochs):
        eta = params.eta_at(epoch)
        sigma = params.sigma_at(epoch)
        inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma)
        order = rng.permutation(samples.shape[0]).astype(np.int64)
        if use_table:
            h_table = np.exp(-d2_geo * inv_two_sigma_sq)
            kernels.train_epoch(weights, samples, scales, order, eta, h_table)
        else:
            kernels.train_epoch_dynamic(
                weights, samples, scales, order, eta, positions, inv_two_sigma_sq
            )

    lattice.weights = weights
    lattice.trained = True
    lattice.params = params
    return lattice


def quantization_error(
    lattice: SphericalLattice,
    samples,
    channel_weights=DEFAULT_CHANNEL_WEIGHTS,
    kernels=_default_kernels,
) -> float:
    """Mean weighted distance from samples to their BMU weights."""
    samples = _samples_array(samples)
    _, d2 = kernels.assign_bmu(lattice.weights, samples, _scales(channel_weights))
    return float(np.sqrt(d2).mean())


def topographic_error(
    lattice: SphericalLattice,
    samples,
    channel_weights=DEFAULT_CHANNEL_WEIGHTS,
    kernels=_default_kernels,
) -> float:
    """Fraction of samples whose two best nodes are not lattice-adjacent."""
    samples = _samples_array(samples)
    b1, b2 = kernels.bmu_top2(lattice.weights, samples, _scales(channel_weights))
    bad = 0
    for first, second in zip(b1, b2):
        if second not in lattice.adjacency[first]:
            bad += 1
    return bad / len(b1)


def compute_umatrix(
    lattice: SphericalLattice, channel_weights=DEFAULT_CHANNEL_WEIGHTS
) -> UMatrix:
    """Mean weighted distance from each node's weights to its neighbors'."""
    scales = _scales(channel_weights)
    weights = lattice.weights
    values = np.empty(lattice.n_nodes, dtype=np.float64)
    for n, nbrs in enumerate(lattice.adjacency):
        diff = (weights[n] - weights[nbrs]) * scales
        values[n] = np.sqrt((diff * diff).sum(axis=1)).mean()
    lo = values.min()
    hi = values.max()
    if hi == lo:
        normalized = np.zeros_like(values)
    else:
        normalized = (values - lo) / (hi - lo)
    return UMatrix(values=values, normalized=normalized)


def assign_voxels(
    lattice: SphericalLattice,
    field: FeatureField,
    kernels=_default_kernels,
    num_threads: int = 0,
) -> VoxelAssignment:
    """BMU for every voxel of the field, with the inverse map."""
    ids, _ = kernels.assign_bmu(
        lattice.weights, field.vectors, _scales(field.weights), num_threads
    )
    counts = np.bincount(ids, minlength=lattice.n_nodes)
    offsets = np.zeros(lattice.n_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    member_voxels = np.argsort(ids, kind="stable").astype(np.int64)
    return VoxelAssignment(
        bmu_of_voxel=ids, node_offsets=offsets, member_voxels=member_voxels
    )
