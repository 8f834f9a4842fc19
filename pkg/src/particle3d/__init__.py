"""Three-view particle reconstruction and 3D size/shape characterisation."""

__version__ = "0.1.0"

from .geometry import (OrientedBox, Silhouette, TriMesh, VoxelGrid, connected_components_3d,
                       convex_hull, extract_surface, mesh_surface_area, mesh_volume, project)
from .morphometry import (ParticleRecord, ShapeIndices, convexity, measure, min_bounding_box,
                          sphericity_intercept, sphericity_wadell, zingg_classify)
from .reconstruct import (ConsistencyReport, TriProjection, intersect_extrusions,
                          reconstruct_particle, reproject_check)

__all__ = [
    "OrientedBox", "Silhouette", "TriMesh", "VoxelGrid", "connected_components_3d", "convex_hull",
    "extract_surface", "mesh_surface_area", "mesh_volume", "project", "ParticleRecord",
    "ShapeIndices", "convexity", "measure", "min_bounding_box", "sphericity_intercept",
    "sphericity_wadell", "zingg_classify", "ConsistencyReport", "TriProjection",
    "intersect_extrusions", "reconstruct_particle", "reproject_check",
]
