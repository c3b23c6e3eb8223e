"""Subdivided-icosahedron lattice on the unit sphere.

Node count is 10*4^L + 2 with exactly twelve degree-5 nodes (the original
icosahedron vertices); every other node has degree 6.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LevelOutOfRangeError

MAX_LEVEL = 6


@dataclass
class TrainingParams:
    """Schedule endpoints for online SOM training.

    Learning rate and neighborhood radius decay exponentially from their
    initial to final values over the epochs; sigma is a geodesic arc in
    radians.
    """

    epochs: int = 20
    eta0: float = 0.5
    eta_min: float = 0.01
    sigma0: float = np.pi / 4
    sigma_min: float = 0.02
    seed: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not (0 < self.eta_min <= self.eta0 <= 1):
            raise ValueError(f"need 0 < eta_min <= eta0 <= 1, got {self.eta0}, {self.eta_min}")
        if not (0 < self.sigma_min <= self.sigma0 <= np.pi):
            raise ValueError(
                f"need 0 < sigma_min <= sigma0 <= pi, got {self.sigma0}, {self.sigma_min}"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    def eta_at(self, epoch: int) -> float:
        if self.epochs == 1:
            return self.eta0
        return self.eta0 * (self.eta_min / self.eta0) ** (epoch / (self.epochs - 1))

    def sigma_at(self, epoch: int) -> float:
        if self.epochs == 1:
            return self.sigma0
        return self.sigma0 * (self.sigma_min / self.sigma0) ** (epoch / (self.epochs - 1))

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "eta0": self.eta0,
            "eta_min": self.eta_min,
            "sigma0": self.sigma0,
            "sigma_min": self.sigma_min,
            "seed": self.seed,
            "stride": self.stride,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingParams":
        return cls(**{k: doc[k] for k in cls().to_dict() if k in doc})


@dataclass
class SphericalLattice:
    """Node positions, adjacency and 6-D weight vectors of the map."""

    level: int
    positions: np.ndarray  # float64, (n_nodes, 3), unit norm
    adjacency: list[np.ndarray]  # per node, sorted int32 neighbor ids
    weights: np.ndarray  # float64, (n_nodes, 6)
    seed: int
    trained: bool = False
    params: TrainingParams | None = field(default=None)

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    def degree_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for nbrs in self.adjacency:
            hist[len(nbrs)] = hist.get(len(nbrs), 0) + 1
        return hist

    def geodesic_distances(self) -> np.ndarray:
        """Pairwise arc lengths (radians) between node positions."""
        dots = np.clip(self.positions @ self.positions.T, -1.0, 1.0)
        np.fill_diagonal(dots, 1.0)  # self-dot can round below 1
        return np.arccos(dots)


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts, faces


def _subdivide(verts: list[np.ndarray], faces: np.ndarray) -> np.ndarray:
    """One 4-way split of every face; midpoints are deduplicated per edge
    and pushed onto the unit sphere."""
    cache: dict[tuple[int, int], int] = {}

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        idx = cache.get(key)
        if idx is None:
            m = verts[a] + verts[b]
            m /= np.linalg.norm(m)
            idx = len(verts)
            verts.append(m)
            cache[key] = idx
        return idx

    out = np.empty((len(faces) * 4, 3), dtype=np.int64)
    for i, (a, b, c) in enumerate(faces):
        ab = midpoint(a, b)
        bc = midpoint(b, c)
        ca = midpoint(c, a)
        out[4 * i + 0] = (a, ab, ca)
        out[4 * i + 1] = (b, bc, ab)
        out[4 * i + 2] = (c, ca, bc)
        out[4 * i + 3] = (ab, bc, ca)
    return out


def icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    """(positions, faces) of an icosahedron subdivided `level` times."""
    base_verts, faces = _icosahedron()
    verts = [v for v in base_verts]
    for _ in range(level):
        faces = _subdivide(verts, faces)
    return np.array(verts), faces


def _faces_to_adjacency(n_nodes: int, faces: np.ndarray) -> list[np.ndarray]:
    neighbor_sets: list[set[int]] = [set() for _ in range(n_nodes)]
    for a, b, c in faces:
        neighbor_sets[a].update((b, c))
        neighbor_sets[b].update((a, c))
        neighbor_sets[c].update((a, b))
    return [np.array(sorted(s), dtype=np.int32) for s in neighbor_sets]


def build_lattice(level: int, seed: int = 0) -> SphericalLattice:
    """Icosphere lattice with weights drawn uniformly from [0, 1]^6."""
    if not 0 <= level <= MAX_LEVEL:
        raise LevelOutOfRangeError(f"level must be in [0, {MAX_LEVEL}], got {level}")
    positions, faces = icosphere(level)
    adjacency = _faces_to_adjacency(len(positions), faces)
    rng = np.random.default_rng(seed)
    weights = rng.random((len(positions), 6))
    return SphericalLattice(
        level=level, positions=positions, adjacency=adjacency, weights=weights, seed=seed
    )


def node_count(level: int) -> int:
    return 10 * 4**level + 2


def save_snapshot(lattice: SphericalLattice, path: str | Path) -> None:
    """Canonical JSON snapshot; floats round-trip bit-exactly via repr."""
    doc = {
        "level": lattice.level,
        "seed": lattice.seed,
        "trained": lattice.trained,
        "positions": lattice.positions.tolist(),
        "adjacency": [nbrs.tolist() for nbrs in lattice.adjacency],
        "weights": lattice.weights.tolist(),
        "params": lattice.params.to_dict() if lattice.params else None,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_snapshot(path: str | Path) -> SphericalLattice:
    doc = json.loads(Path(path).read_text())
    return SphericalLattice(
        level=int(doc["level"]),
        positions=np.array(doc["positions"], dtype=np.float64),
        adjacency=[np.array(n, dtype=np.int32) for n in doc["adjacency"]],
        weights=np.array(doc["weights"], dtype=np.float64),
        seed=int(doc["seed"]),
        trained=bool(doc["trained"]),
        params=TrainingParams.from_dict(doc["params"]) if doc.get("params") else None,
    )
