"""Visual-hull reconstruction from three orthogonal silhouettes."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyIntersection
from .geometry import Silhouette, VoxelGrid, largest_component, project

log = logging.getLogger(__name__)


def resample_silhouette(sil: Silhouette, pitch: float) -> Silhouette:
    """Nearest-neighbour resampling onto the lattice of another pitch."""
    if abs(sil.pitch - pitch) <= 1e-9 * pitch:
        return Silhouette(sil.mask, pitch, sil.view, sil.offset)
    ratio = sil.pitch / pitch
    lo = [int(np.floor(o * ratio)) for o in sil.offset]
    hi = [int(np.ceil((o + n) * ratio)) for o, n in zip(sil.offset, sil.mask.shape)]
    src = []
    for a in range(2):
        centres = (np.arange(lo[a], hi[a]) + 0.5) / ratio
        idx = np.floor(centres).astype(int) - sil.offset[a]
        src.append(np.clip(idx, 0, sil.mask.shape[a] - 1))
    mask = sil.mask[np.ix_(src[0], src[1])]
    return Silhouette(mask, pitch, sil.view, (lo[0], lo[1]))


@dataclass(frozen=True)
class TriProjection:
    """Three silhouettes windowed onto one common lattice box.

    ``silA`` spans (Y, Z), ``silB`` spans (X, Z) and ``silC`` spans (X, Y); each
    world axis must be covered by the same index range in both views that see it.
    """

    silA: Silhouette
    silB: Silhouette
    silC: Silhouette

    def __post_init__(self):
        for sil, view in ((self.silA, "A"), (self.silB, "B"), (self.silC, "C")):
            if sil.view != view:
                raise DimensionMismatch(f"expected a view-{view} silhouette, got view {sil.view}")
        p = self.silA.pitch
        if any(abs(s.pitch - p) > 1e-9 * p for s in (self.silB, self.silC)):
            raise DimensionMismatch("silhouette pitches differ; resample first")
        checks = (("Y", self._range(self.silA, 0), self._range(self.silC, 1)),
                  ("Z", self._range(self.silA, 1), self._range(self.silB, 1)),
                  ("X", self._range(self.silB, 0), self._range(self.silC, 0)))
        for axis, r1, r2 in checks:
            if r1 != r2:
                raise DimensionMismatch(f"{axis}-extent differs between views: {r1} vs {r2}")

    @staticmethod
    def _range(sil: Silhouette, a: int) -> tuple[int, int]:
        return sil.offset[a], sil.offset[a] + sil.mask.shape[a]

    @property
    def pitch(self) -> float:
        return self.silA.pitch

    @property
    def index_box(self) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
        return self._range(self.silB, 0), self._range(self.silA, 0), self._range(self.silA, 1)

    @classmethod
    def aligned(cls, silA: Silhouette, silB: Silhouette, silC: Silhouette,
                pitch: float | None = None) -> "TriProjection":
        """Resample to a common pitch and window every view onto the union box.

        Each world axis range is the union of the tight extents reported by the
        two views that see it.
        """
        if pitch is None:
            pitch = float(np.mean([silA.pitch, silB.pitch, silC.pitch]))
        a, b, c = (resample_silhouette(s, pitch).tight() for s in (silA, silB, silC))

        def union(r1, r2):
            return min(r1[0], r2[0]), max(r1[1], r2[1])

        y = union(cls._range(a, 0), cls._range(c, 1))
        z = union(cls._range(a, 1), cls._range(b, 1))
        x = union(cls._range(b, 0), cls._range(c, 0))
        return cls(a.crop_to(y, z), b.crop_to(x, z), c.crop_to(x, y))


@dataclass(frozen=True)
class ConsistencyReport:
    consistent: bool
    per_view_deficit: tuple[float, float, float]

    @property
    def max_deficit(self) -> float:
        return max(self.per_view_deficit)


def intersect_extrusions(tp: TriProjection) -> VoxelGrid:
    """Voxel (x, y, z) is occupied iff silA[y, z] and silB[x, z] and silC[x, y].

    The result may have zero occupied voxels; callers check ``grid.count``.
    """
    a, b, c = tp.silA.mask, tp.silB.mask, tp.silC.mask
    occ = a[None, :, :] & b[:, None, :] & c[:, :, None]
    (x0, _), (y0, _), (z0, _) = tp.index_box
    return VoxelGrid.from_index_origin(occ, tp.pitch, (x0, y0, z0))


def reproject_check(grid: VoxelGrid, tp: TriProjection) -> ConsistencyReport:
    """Fraction of each input silhouette not covered by the grid's reprojection."""
    if abs(grid.pitch - tp.pitch) > 1e-9 * tp.pitch:
        raise DimensionMismatch("grid and silhouettes use different pitches")
    deficits = []
    for sil, axis in ((tp.silA, "X"), (tp.silB, "Y"), (tp.silC, "Z")):
        total = sil.area
        if total == 0:
            deficits.append(0.0)
            continue
        u0, v0 = sil.offset
        rep = project(grid, axis).crop_to((u0, u0 + sil.width), (v0, v0 + sil.height))
        missing = np.count_nonzero(sil.mask & ~rep.mask)
        deficits.append(missing / total)
    return ConsistencyReport(all(d == 0 for d in deficits), tuple(deficits))


def reconstruct_with_report(tp: TriProjection, connectivity: int = 26
                            ) -> tuple[VoxelGrid, ConsistencyReport, int]:
    """Hull, largest component, and the reprojection audit of that component.

    Returns ``(grid, report, n_components)`` where ``n_components`` counts the
    connected pieces of the raw intersection.
    """
    for sil in (tp.silA, tp.silB, tp.silC):
        if sil.area == 0:
            raise EmptyIntersection(f"view {sil.view} silhouette is empty")
    hull = intersect_extrusions(tp)
    if hull.count == 0:
        raise EmptyIntersection("silhouette extrusions do not intersect")
    grid, ncomp = largest_component(hull, connectivity)
    report = reproject_check(grid, tp)
    if ncomp > 1 or not report.consistent:
        log.info("reconstruction kept 1 of %d components, deficits %s",
                 ncomp, ", ".join(f"{d:.4f}" for d in report.per_view_deficit))
    return grid, report, ncomp


def reconstruct_particle(tp: TriProjection, connectivity: int = 26) -> VoxelGrid:
    """Largest connected piece of the visual hull."""
    return reconstruct_with_report(tp, connectivity)[0]
