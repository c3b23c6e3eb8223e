import numpy as np
import pytest

from somdvr.errors import LevelOutOfRangeError
from somdvr.lattice import (
    SphericalLattice,
    TrainingParams,
    build_lattice,
    icosphere,
    load_snapshot,
    node_count,
    save_snapshot,
)


def _euler_counts(faces):
    """Independent mesh enumeration: unique vertices, edges, Euler check."""
    verts = set()
    edges = set()
    for a, b, c in faces:
        verts.update((int(a), int(b), int(c)))
        for u, v in ((a, b), (b, c), (c, a)):
            edges.add((min(u, v), max(u, v)))
    return len(verts), len(edges), len(faces)


@pytest.mark.parametrize("level", [0, 1, 2, 3, 4])
def test_node_count_formula(level):
    positions, faces = icosphere(level)
    v, e, f = _euler_counts(faces)
    assert v - e + f == 2  # closed surface of genus 0
    assert v == 10 * 4**level + 2
    assert v == node_count(level)
    assert len(positions) == v


@pytest.mark.parametrize("level", [0, 1, 2, 3, 4])
def test_degree_histogram(level):
    lattice = build_lattice(level)
    hist = lattice.degree_histogram()
    if level == 0:
        assert hist == {5: 12}
    else:
        assert hist == {5: 12, 6: lattice.n_nodes - 12}


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_adjacency_symmetric_irreflexive_sorted(level):
    lattice = build_lattice(level)
    for n, nbrs in enumerate(lattice.adjacency):
        assert np.array_equal(nbrs, np.sort(nbrs))
        assert n not in nbrs
        for nb in nbrs:
            assert n in lattice.adjacency[nb]


@pytest.mark.parametrize("level", [0, 1, 2, 3, 4])
def test_positions_unit_norm(level):
    lattice = build_lattice(level)
    norms = np.linalg.norm(lattice.positions, axis=1)
    assert np.max(np.abs(norms - 1.0)) < 1e-9


def test_level_out_of_range():
    with pytest.raises(LevelOutOfRangeError):
        build_lattice(-1)
    with pytest.raises(LevelOutOfRangeError):
        build_lattice(7)


def test_weights_seeded_uniform():
    a = build_lattice(2, seed=5)
    b = build_lattice(2, seed=5)
    c = build_lattice(2, seed=6)
    assert np.array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)
    assert a.weights.min() >= 0.0 and a.weights.max() <= 1.0
    assert a.weights.shape == (162, 6)


def test_geodesic_distances():
    lattice = build_lattice(1)
    geo = lattice.geodesic_distances()
    assert np.allclose(np.diag(geo), 0.0)
    assert np.array_equal(geo, geo.T)
    assert geo.max() <= np.pi + 1e-12


def test_snapshot_round_trip(tmp_path):
    lattice = build_lattice(2, seed=9)
    lattice.weights[0, 0] = 1 / 3  # a value that needs full float precision
    lattice.params = TrainingParams(seed=9)
    lattice.trained = True
    path = tmp_path / "snap.json"
    save_snapshot(lattice, path)
    back = load_snapshot(path)
    assert back.level == lattice.level
    assert back.seed == lattice.seed
    assert back.trained
    assert np.array_equal(back.weights, lattice.weights)
    assert np.array_equal(back.positions, lattice.positions)
    assert all(
        np.array_equal(a, b) for a, b in zip(back.adjacency, lattice.adjacency)
    )
    assert back.params.to_dict() == lattice.params.to_dict()
    # re-saving produces identical bytes (determinism of the format)
    path2 = tmp_path / "snap2.json"
    save_snapshot(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_training_params_validation():
    with pytest.raises(ValueError):
        TrainingParams(epochs=0)
    with pytest.raises(ValueError):
        TrainingParams(eta0=0.1, eta_min=0.5)
    with pytest.raises(ValueError):
        TrainingParams(sigma0=0.01, sigma_min=0.02)
    with pytest.raises(ValueError):
        TrainingParams(sigma0=4.0)
    with pytest.raises(ValueError):
        TrainingParams(stride=0)


def test_schedule_endpoints():
    params = TrainingParams(epochs=10, eta0=0.5, eta_min=0.01, sigma0=0.8, sigma_min=0.02)
    assert params.eta_at(0) == 0.5
    assert params.eta_at(9) == pytest.approx(0.01, rel=1e-12)
    assert params.sigma_at(0) == 0.8
    assert params.sigma_at(9) == pytest.approx(0.02, rel=1e-12)
    # strictly decreasing
    etas = [params.eta_at(t) for t in range(10)]
    assert all(a > b for a, b in zip(etas, etas[1:]))
    one = TrainingParams(epochs=1)
    assert one.eta_at(0) == one.eta0
    assert one.sigma_at(0) == one.sigma0


def test_single_node_lattice_is_constructible():
    # degenerate lattice used by metric edge-case tests
    lattice = SphericalLattice(
        level=0,
        positions=np.array([[0.0, 0.0, 1.0]]),
        adjacency=[np.array([], dtype=np.int32)],
        weights=np.full((1, 6), 0.5),
        seed=0,
    )
    assert lattice.n_nodes == 1
