"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all somdvr errors."""


class SizeMismatchError(PipelineError):
    """Raw byte payload disagrees with the declared dimensions."""


class UnsupportedDepthError(PipelineError):
    """Sample depth is not 8 or 16 bits."""


class IndexOutOfBoundsError(PipelineError, IndexError):
    """Voxel index outside the volume."""


class LevelOutOfRangeError(PipelineError):
    """Subdivision level outside the supported range."""


class EmptySampleSetError(PipelineError):
    """An operation that needs samples received none."""


class OverlappingSelectionError(PipelineError):
    """A node selection intersects an already-defined group."""


class UnknownNodeError(PipelineError):
    """A node id does not exist on the lattice."""


class UnknownGroupError(PipelineError):
    """A group id does not exist in the registry."""


class VarianceOutOfRangeError(PipelineError):
    """Variance outside [0, 1/4], impossible for intensities in [0, 1]."""


class DegenerateCameraError(PipelineError):
    """Camera basis cannot be built (up parallel to view, bad fov...)."""


class IoFailureError(PipelineError):
    """Filesystem read/write failed."""
