"""somdvr: SOM-driven transfer function design and direct volume rendering.

Pipeline: load a scalar volume, build per-voxel features, train a
spherical SOM over them, let the user (or a replay script) group lattice
nodes, turn groups into color/opacity, and raycast the result.
"""

from .backend import BACKEND_NAME, get_backend
from .features import (
    DEFAULT_CHANNEL_WEIGHTS,
    FeatureField,
    build_feature_field,
    default_stride,
    gradient,
    sample_features,
    second_derivative,
)
from .groups import (
    ColorVolume,
    Group,
    GroupRegistry,
    build_color_volume,
    define_group,
    harmonic_hues,
    opacity_from_variance,
)
from .lattice import (
    SphericalLattice,
    TrainingParams,
    build_lattice,
    load_snapshot,
    node_count,
    save_snapshot,
)
from .render import (
    Camera,
    RenderedImage,
    RenderSettings,
    default_camera,
    png_bytes,
    raycast,
    write_png,
)
from .som import (
    UMatrix,
    VoxelAssignment,
    assign_voxels,
    bmu,
    compute_umatrix,
    quantization_error,
    topographic_error,
    train,
)
from .volume import (
    Volume,
    VolumeMeta,
    load_raw,
    load_raw_file,
    make_demo_ct,
    make_phantom,
    save_raw_file,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND_NAME",
    "Camera",
    "ColorVolume",
    "DEFAULT_CHANNEL_WEIGHTS",
    "FeatureField",
    "Group",
    "GroupRegistry",
    "RenderSettings",
    "RenderedImage",
    "SphericalLattice",
    "TrainingParams",
    "UMatrix",
    "Volume",
    "VolumeMeta",
    "VoxelAssignment",
    "assign_voxels",
    "bmu",
    "build_color_volume",
    "build_feature_field",
    "build_lattice",
    "compute_umatrix",
    "default_camera",
    "default_stride",
    "define_group",
    "get_backend",
    "gradient",
    "harmonic_hues",
    "load_raw",
    "load_raw_file",
    "load_snapshot",
    "make_demo_ct",
    "make_phantom",
    "node_count",
    "opacity_from_variance",
    "png_bytes",
    "quantization_error",
    "raycast",
    "sample_features",
    "save_raw_file",
    "save_snapshot",
    "second_derivative",
    "topographic_error",
    "train",
    "write_png",
]
