"""Size and shape descriptors of a single particle."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.transform import Rotation

from .errors import DegenerateInput, OrderViolation, OutOfRange
from .geometry import (OrientedBox, TriMesh, VoxelGrid, convex_hull, extract_surface,
                       mesh_surface_area, mesh_volume)

log = logging.getLogger(__name__)

ZINGG_THRESHOLD = 2.0 / 3.0
ZINGG_CLASSES = ("Compact", "Elongated", "Flat", "Bladed")
WADELL_FLAG = 1.02
CONVEXITY_FLAG = 1.001

MAX_NORMAL_CANDIDATES = 256
REFINE_TOL = 1e-4


@dataclass(frozen=True)
class ShapeIndices:
    elongation: float
    flatness: float
    zingg_class: str
    sphericity_wadell: float
    sphericity_intercept: float
    convexity: float


@dataclass(frozen=True)
class ParticleRecord:
    particle_id: str
    run_id: str
    source: str
    S: float
    I: float
    L: float
    volume: float
    area: float
    indices: ShapeIndices
    consistency_deficit_max: float = 0.0
    frame_ref: Optional[tuple[int, int, int]] = None

    def __post_init__(self):
        if self.source not in ("reconstructed", "voxel-import"):
            raise ValueError(f"unknown source kind {self.source!r}")
        if not (0 < self.S <= self.I <= self.L):
            raise OrderViolation(f"S <= I <= L violated: {self.S}, {self.I}, {self.L}")
        if not (self.volume > 0 and self.area > 0):
            raise ValueError("volume and area must be positive")


# --- bounding box -----------------------------------------------------------

def _extents(points: np.ndarray, rows: np.ndarray) -> np.ndarray:
    proj = points @ rows.T
    return proj.max(0) - proj.min(0)


def _perp_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(n, a)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def _calipers(q: np.ndarray) -> tuple[float, float]:
    """Minimum-area enclosing rectangle of 2D points: (area, angle)."""
    try:
        h = ConvexHull(q)
    except QhullError:
        return math.inf, 0.0
    poly = q[h.vertices]
    edges = np.roll(poly, -1, axis=0) - poly
    angles = np.unique(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), np.pi / 2))
    c, s = np.cos(angles), np.sin(angles)
    pu = poly[:, 0, None] * c + poly[:, 1, None] * s
    pv = -poly[:, 0, None] * s + poly[:, 1, None] * c
    areas = np.ptp(pu, axis=0) * np.ptp(pv, axis=0)
    k = int(np.argmin(areas))
    return float(areas[k]), float(angles[k])


def _face_normal_candidates(hull: TriMesh) -> np.ndarray:
    p = hull.vertices[hull.triangles]
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area = np.linalg.norm(cross, axis=1)
    n = cross / area[:, None]
    # n and -n give the same box
    flip = (n[:, 0] < -1e-12) | ((np.abs(n[:, 0]) <= 1e-12) & (n[:, 1] < -1e-12)) \
        | ((np.abs(n[:, 0]) <= 1e-12) & (np.abs(n[:, 1]) <= 1e-12) & (n[:, 2] < 0))
    n[flip] *= -1
    key = np.round(n, 9)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    weight = np.bincount(inv.ravel(), weights=area)
    order = np.argsort(-weight, kind="stable")[:MAX_NORMAL_CANDIDATES]
    out = uniq[order]
    return out / np.linalg.norm(out, axis=1)[:, None]


def _box_volume(points: np.ndarray, rows: np.ndarray) -> float:
    return float(np.prod(_extents(points, rows)))


def _refine(points: np.ndarray, rows: np.ndarray, step: float = 0.05) -> tuple[np.ndarray, float]:
    """Pattern search over small rotations until the step drops below REFINE_TOL rad."""
    best = _box_volume(points, rows)
    moves = np.vstack([np.eye(3), -np.eye(3)])
    while step >= REFINE_TOL:
        improved = False
        for m in moves:
            cand = Rotation.from_rotvec(m * step).as_matrix() @ rows
            vol = _box_volume(points, cand)
            if vol < best * (1 - 1e-12):
                best, rows, improved = vol, cand, True
                break
        if not improved:
            step /= 2
    return rows, best


def min_bounding_box(mesh_or_points) -> OrientedBox:
    """Minimum-volume oriented bounding box of a mesh (or point cloud).

    Candidates are the axis-aligned frame, the principal axes, and for each
    hull facet normal the rotating-calipers rectangle of the projected hull.
    The best few are polished by a local search over rotations.
    """
    pts = mesh_or_points.vertices if isinstance(mesh_or_points, TriMesh) \
        else np.asarray(mesh_or_points, dtype=float).reshape(-1, 3)
    hull = convex_hull(pts)
    h = hull.vertices
    centre = h.mean(0)
    hc = h - centre

    candidates: list[tuple[float, np.ndarray]] = []
    eye = np.eye(3)
    candidates.append((_box_volume(hc, eye), eye))
    _, vecs = np.linalg.eigh(np.cov(hc.T))
    candidates.append((_box_volume(hc, vecs.T), vecs.T.copy()))
    for n in _face_normal_candidates(hull):
        u, w = _perp_basis(n)
        q = np.column_stack([hc @ u, hc @ w])
        area, ang = _calipers(q)
        if not np.isfinite(area):
            continue
        d1 = math.cos(ang) * u + math.sin(ang) * w
        d2 = -math.sin(ang) * u + math.cos(ang) * w
        rows = np.vstack([d1, d2, n])
        candidates.append((area * float(np.ptp(hc @ n)), rows))

    candidates.sort(key=lambda c: c[0])
    best_rows, best_vol = None, math.inf
    for _, rows in candidates[:3]:
        r, vol = _refine(hc, rows)
        if vol < best_vol:
            best_rows, best_vol = r, vol

    ext = _extents(hc, best_rows)
    proj = hc @ best_rows.T
    mid = (proj.max(0) + proj.min(0)) / 2
    order = np.argsort(ext, kind="stable")
    axes = best_rows[order]
    if np.linalg.det(axes) < 0:
        axes[2] *= -1
    S, I, L = (float(e) for e in ext[order])
    if S <= 0:
        raise DegenerateInput("bounding box has zero thickness")
    return OrientedBox(S, I, L, axes.T, tuple(centre + mid @ best_rows))


# --- indices ----------------------------------------------------------------

def zingg_classify(elongation: float, flatness: float, threshold: float = ZINGG_THRESHOLD) -> str:
    """Zingg class; values equal to the threshold fall in the non-compact side."""
    if not (0 < elongation <= 1 and 0 < flatness <= 1):
        raise OutOfRange(f"elongation/flatness must lie in (0, 1], got {elongation}, {flatness}")
    if not 0 < threshold < 1:
        raise OutOfRange("threshold must lie in (0, 1)")
    elongated = elongation <= threshold
    flat = flatness <= threshold
    if elongated and flat:
        return "Bladed"
    if elongated:
        return "Elongated"
    if flat:
        return "Flat"
    return "Compact"


def sphericity_wadell(volume: float, area: float) -> float:
    """Area of the equal-volume sphere divided by the actual surface area."""
    if not (volume > 0 and area > 0):
        raise OutOfRange("volume and area must be positive")
    return math.pi ** (1 / 3) * (6 * volume) ** (2 / 3) / area


def sphericity_intercept(S: float, I: float, L: float) -> float:
    if not (0 < S <= I <= L):
        raise OrderViolation(f"expected 0 < S <= I <= L, got {S}, {I}, {L}")
    return (I * S / (L * L)) ** (1 / 3)


def convexity(mesh: TriMesh) -> float:
    """Solid volume over the volume of its convex hull."""
    value = mesh_volume(mesh) / mesh_volume(convex_hull(mesh.vertices))
    if value > CONVEXITY_FLAG:
        log.warning("convexity %.5f exceeds 1 beyond discretisation tolerance", value)
    return value


def _require_solid(grid: VoxelGrid) -> None:
    centres = grid.voxel_indices().astype(float)
    if len(centres) < 4:
        raise DegenerateInput(f"particle has {len(centres)} voxel(s); at least 4 non-coplanar needed")
    c = centres - centres.mean(0)
    if np.linalg.matrix_rank(c, tol=1e-9) < 3:
        raise DegenerateInput("particle voxels are coplanar")


def measure(solid: VoxelGrid, particle_id: str, run_id: str = "run",
            source: str = "reconstructed", consistency_deficit_max: float = 0.0,
            frame_ref=None, threshold: float = ZINGG_THRESHOLD) -> ParticleRecord:
    """Full descriptor row for one particle.

    Volume is the voxel count times pitch cubed; area, hull and bounding box
    come from the extracted surface.
    """
    if solid.count == 0:
        from .errors import EmptyGrid
        raise EmptyGrid(f"particle {particle_id} has no voxels")
    _require_solid(solid)
    mesh = extract_surface(solid)
    volume = solid.volume
    area = mesh_surface_area(mesh)
    box = min_bounding_box(mesh)
    mesh_vol = mesh_volume(mesh)
    if abs(mesh_vol - volume) > 0.1 * volume:
        log.info("particle %s: mesh volume %.4g vs voxel volume %.4g", particle_id, mesh_vol, volume)
    if volume > box.volume * (1 + 1e-9):
        raise DegenerateInput(f"particle {particle_id}: voxel volume exceeds its bounding box "
                              "(structure thinner than the surface smoothing scale)")
    e, f = box.I / box.L, box.S / box.I
    wadell = sphericity_wadell(volume, area)
    if wadell > WADELL_FLAG:
        log.warning("particle %s: Wadell sphericity %.4f above %.2f", particle_id, wadell, WADELL_FLAG)
    idx = ShapeIndices(
        elongation=e,
        flatness=f,
        zingg_class=zingg_classify(e, f, threshold),
        sphericity_wadell=wadell,
        sphericity_intercept=sphericity_intercept(box.S, box.I, box.L),
        convexity=convexity(mesh),
    )
    return ParticleRecord(particle_id, run_id, source, box.S, box.I, box.L, volume, area, idx,
                          consistency_deficit_max, frame_ref)
