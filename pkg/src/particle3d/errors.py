"""Exception hierarchy shared by every stage of the pipeline."""


class Particle3DError(Exception):
    """Base class for all library errors."""


class DegenerateInput(Particle3DError):
    """Point set is coplanar, collinear or coincident."""


class OpenMesh(Particle3DError):
    """A closed surface was required."""


class EmptyGrid(Particle3DError):
    """The voxel grid has no occupied voxels."""


class DimensionMismatch(Particle3DError):
    """Silhouettes do not cover a common lattice box."""


class EmptyIntersection(Particle3DError):
    """The extrusion intersection is empty."""


class OutOfRange(Particle3DError, ValueError):
    pass


class OrderViolation(Particle3DError, ValueError):
    """Dimensions are not ordered S <= I <= L."""


class EmptyInput(Particle3DError):
    pass


class EmptyRun(Particle3DError):
    pass


class NoObject(Particle3DError):
    pass


class MultipleObjects(Particle3DError):
    pass


class ScaleDivergence(Particle3DError):
    """Per-view calibration scales disagree beyond tolerance."""


class AmbiguousMatch(Particle3DError):
    pass


class MemoryCap(Particle3DError):
    """A rasterisation would exceed the configured voxel budget."""


class OverlapDetected(Particle3DError):
    """Two scene solids overlap in some frame."""


class InconsistentSliceDims(Particle3DError):
    pass


class ManifestError(Particle3DError):
    pass
