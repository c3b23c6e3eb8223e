"""From selected node groups to rendering properties.

Opacity falls linearly with the group's intensity variance (coherent
material renders solid, mixed material translucent); hues are spread
over a 60-degree analogous arc; saturation follows gradient magnitude
and brightness follows intensity per voxel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    OverlappingSelectionError,
    UnknownGroupError,
    UnknownNodeError,
    VarianceOutOfRangeError,
)
from .features import FeatureField
from .som import VoxelAssignment
from .volume import Volume

ALPHA_MIN_DEFAULT = 0.1
ALPHA_MAX_DEFAULT = 0.9
SAT_MIN_DEFAULT = 0.3
VAL_MIN_DEFAULT = 0.2
HUE_ARC_CENTER = 210.0
HUE_ARC_WIDTH = 60.0

_VAR_TOL = 1e-9  # float slack on the exact [0, 1/4] bound


@dataclass(frozen=True)
class Group:
    """A disjoint set of lattice nodes and its derived render properties."""

    id: int
    node_ids: tuple[int, ...]  # sorted, unique
    voxel_ids: np.ndarray = field(compare=False)  # int64 member voxels
    variance: float
    opacity: float
    hue: float  # degrees in [0, 360)

    @property
    def voxel_count(self) -> int:
        return int(self.voxel_ids.shape[0])


@dataclass(frozen=True)
class ColorVolume:
    """Per-voxel RGBA in [0, 1]; alpha 0 outside every group."""

    dims: tuple[int, int, int]
    rgba: np.ndarray  # float32, (n_voxels, 4)


def opacity_from_variance(
    variance: float,
    alpha_min: float = ALPHA_MIN_DEFAULT,
    alpha_max: float = ALPHA_MAX_DEFAULT,
) -> float:
    """Linear map [0, 1/4] -> [alpha_max, alpha_min] (decreasing)."""
    if not -_VAR_TOL <= variance <= 0.25 + _VAR_TOL:
        raise VarianceOutOfRangeError(f"variance {variance} outside [0, 0.25]")
    v = min(max(variance, 0.0), 0.25)
    return alpha_min + (alpha_max - alpha_min) * (1.0 - v / 0.25)


def harmonic_hues(n_groups: int) -> list[float]:
    """Evenly spaced hues on a 60-degree analogous arc centered at 210."""
    if n_groups < 1:
        raise ValueError(f"n_groups must be >= 1, got {n_groups}")
    if n_groups == 1:
        return [HUE_ARC_CENTER % 360.0]
    start = HUE_ARC_CENTER - HUE_ARC_WIDTH / 2.0
    step = HUE_ARC_WIDTH / (n_groups - 1)
    return [(start + i * step) % 360.0 for i in range(n_groups)]


def define_group(
    node_ids,
    assignment: VoxelAssignment,
    volume: Volume,
    existing: list[Group],
    group_id: int | None = None,
    alpha_min: float = ALPHA_MIN_DEFAULT,
    alpha_max: float = ALPHA_MAX_DEFAULT,
) -> Group:
    """Build a group from a node selection.

    Raises UnknownNodeError for ids outside the lattice and
    OverlappingSelectionError if any node is already grouped. Empty voxel
    membership is legal (variance 0).
    """
    nodes = sorted({int(n) for n in node_ids})
    if not nodes:
        raise ValueError("node selection is empty")
    if nodes[0] < 0 or nodes[-1] >= assignment.n_nodes:
        bad = [n for n in nodes if n < 0 or n >= assignment.n_nodes]
        raise UnknownNodeError(f"node ids {bad} outside lattice of {assignment.n_nodes}")
    taken = {n for g in existing for n in g.node_ids}
    overlap = taken.intersection(nodes)
    if overlap:
        raise OverlappingSelectionError(f"nodes already grouped: {sorted(overlap)}")
    voxels = assignment.members_of_nodes(nodes)
    variance = float(np.var(volume.intensities[voxels])) if voxels.size else 0.0
    if group_id is None:
        group_id = max((g.id for g in existing), default=0) + 1
    return Group(
        id=group_id,
        node_ids=tuple(nodes),
        voxel_ids=voxels,
        variance=variance,
        opacity=opacity_from_variance(variance, alpha_min, alpha_max),
        hue=HUE_ARC_CENTER,
    )


def assign_hues(groups: list[Group]) -> list[Group]:
    """Re-spread hues across all groups, in definition order."""
    if not groups:
        return []
    hues = harmonic_hues(len(groups))
    return [replace(g, hue=h) for g, h in zip(groups, hues)]


def hsv_to_rgb(h, s, v):
    """Vectorized standard sector HSV -> RGB; all components in [0, 1],
    h in degrees."""
    h = np.asarray(h, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    hp = np.mod(h, 360.0) / 60.0
    sector = np.floor(hp).astype(np.int64) % 6
    f = hp - np.floor(hp)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(sector, [v, q, p, p, t, v])
    g = np.choose(sector, [t, v, v, q, p, p])
    b = np.choose(sector, [p, p, t, v, v, q])
    return r, g, b


def build_color_volume(
    groups: list[Group],
    volume: Volume,
    fielddata: FeatureField,
    sat_min: float = SAT_MIN_DEFAULT,
    val_min: float = VAL_MIN_DEFAULT,
) -> ColorVolume:
    """Per-voxel RGBA from group hue/opacity and voxel properties.

    Saturation rises with normalized gradient magnitude, brightness with
    intensity; ungrouped voxels stay fully transparent.
    """
    seen: set[int] = set()
    for g in groups:
        overlap = seen.intersection(g.node_ids)
        if overlap:
            raise OverlappingSelectionError(f"groups share nodes: {sorted(overlap)}")
        seen.update(g.node_ids)

    n = volume.meta.n_voxels
    rgba = np.zeros((n, 4), dtype=np.float32)
    for g in groups:
        vox = g.voxel_ids
        if vox.size == 0:
            continue
        sat = sat_min + (1.0 - sat_min) * fielddata.vectors[vox, 4]
        val = val_min + (1.0 - val_min) * fielddata.vectors[vox, 3]
        r, gg, b = hsv_to_rgb(g.hue, sat, val)
        rgba[vox, 0] = r
        rgba[vox, 1] = gg
        rgba[vox, 2] = b
        rgba[vox, 3] = g.opacity
    return ColorVolume(dims=volume.dims, rgba=rgba)


class GroupRegistry:
    """Ordered group list with disjointness enforcement and hue spread."""

    def __init__(self, alpha_min: float = ALPHA_MIN_DEFAULT, alpha_max: float = ALPHA_MAX_DEFAULT):
        self.groups: list[Group] = []
        self.alpha_min = alpha_min
        self.alpha_max = alpha_max
        self._next_id = 1

    def clone(self) -> "GroupRegistry":
        """Shallow copy for transactional mutation (groups are frozen)."""
        other = GroupRegistry(self.alpha_min, self.alpha_max)
        other.groups = list(self.groups)
        other._next_id = self._next_id
        return other

    def define(self, node_ids, assignment: VoxelAssignment, volume: Volume) -> Group:
        group = define_group(
            node_ids, assignment, volume, self.groups,
            group_id=self._next_id, alpha_min=self.alpha_min, alpha_max=self.alpha_max,
        )
        self._next_id += 1
        self.groups = assign_hues([*self.groups, group])
        return self.groups[-1]

    def delete(self, group_id: int) -> None:
        kept = [g for g in self.groups if g.id != group_id]
        if len(kept) == len(self.groups):
            raise UnknownGroupError(f"no group with id {group_id}")
        self.groups = assign_hues(kept)

    def node_sets(self) -> list[list[int]]:
        return [list(g.node_ids) for g in self.groups]
