"""Shared fixtures: the frozen two-blobs training fixture and helpers."""

from __future__ import annotations

import numpy as np
import pytest

import somdvr
from somdvr.lattice import TrainingParams

TWO_BLOBS_DIMS = (32, 32, 32)
TWO_BLOBS_SEED = 7
TWO_BLOBS_LEVEL = 2


@pytest.fixture(scope="session")
def two_blobs_volume():
    return somdvr.make_phantom("two-blobs", dims=TWO_BLOBS_DIMS, i1=0.2, i2=0.9)


@pytest.fixture(scope="session")
def two_blobs_field(two_blobs_volume):
    return somdvr.build_feature_field(two_blobs_volume)


@pytest.fixture(scope="session")
def two_blobs_samples(two_blobs_field):
    _, samples = somdvr.sample_features(two_blobs_field, 1, TWO_BLOBS_SEED)
    return samples


@pytest.fixture(scope="session")
def two_blobs_trained(two_blobs_field, two_blobs_samples):
    """The frozen fixture: 32^3 two-blobs, L=2 lattice, defaults, seed 7."""
    params = TrainingParams(seed=TWO_BLOBS_SEED, stride=1)
    lattice = somdvr.build_lattice(TWO_BLOBS_LEVEL, seed=TWO_BLOBS_SEED)
    qe_initial = somdvr.quantization_error(
        lattice, two_blobs_samples, channel_weights=two_blobs_field.weights
    )
    somdvr.train(lattice, two_blobs_samples, params, channel_weights=two_blobs_field.weights)
    return lattice, qe_initial


@pytest.fixture(scope="session")
def two_blobs_assignment(two_blobs_trained, two_blobs_field):
    lattice, _ = two_blobs_trained
    return somdvr.assign_voxels(lattice, two_blobs_field)


def blob_node_partition(lattice, field, volume):
    """Oracle: assign each node to the nearest true material centroid
    (background / blob1 / blob2) in weighted feature space."""
    labels = volume.labels
    scales = np.asarray(field.weights)
    weights = lattice.weights
    dists = []
    for lab in (0, 1, 2):
        centroid = field.vectors[labels == lab].mean(axis=0)
        diff = (weights - centroid) * scales
        dists.append((diff * diff).sum(axis=1))
    owner = np.argmin(np.stack(dists), axis=0)
    return (
        np.nonzero(owner == 1)[0].astype(np.int64),
        np.nonzero(owner == 2)[0].astype(np.int64),
    )


def has_native_backend() -> bool:
    try:
        somdvr.get_backend("native")
        return True
    except ImportError:
        return False
