"""Run-level orchestration: frames -> records, and voxel stacks -> records."""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, TypeVar

import numpy as np

from .calibrate import CalibrationProfile
from .errors import (DegenerateInput, EmptyGrid, EmptyIntersection, InconsistentSliceDims,
                     ManifestError, Particle3DError)
from .geometry import VIEWS, VoxelGrid, connected_components_3d
from .morphometry import ParticleRecord, measure
from .reconstruct import reconstruct_with_report
from .stats import _write_rows, fmt
from .stream import (DetectionConfig, Loss, MatchingConfig, TrackingConfig, detect,
                     load_frames, match_views, read_image, track_objects)

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

SLICE_NAME = re.compile(r"^slice_(\d{6})\.(pgm|png)$")


def pmap(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Order-preserving map, threaded when ``threads > 1``."""
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


@dataclass
class RunManifest:
    run_id: str
    frame_dirs: dict[str, Path]
    calibration: Path
    flow_axis: str = "Y"
    frame_interval_us: float = 1000.0
    orientation: dict[str, dict] = field(default_factory=dict)
    detection: DetectionConfig = DetectionConfig()
    tracking: TrackingConfig = TrackingConfig()
    matching: MatchingConfig = MatchingConfig()
    output_dir: Optional[Path] = None
    source: Optional[Path] = None

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ManifestError(f"manifest not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, path.parent, path)

    @classmethod
    def from_dict(cls, doc: dict, base: Path = Path("."), source: Optional[Path] = None) -> "RunManifest":
        def resolve(p) -> Path:
            p = Path(p)
            return p if p.is_absolute() else base / p

        try:
            frames = {v: resolve(doc["frames"][v]) for v in VIEWS}
            m = cls(
                run_id=str(doc["run_id"]),
                frame_dirs=frames,
                calibration=resolve(doc["calibration"]),
                flow_axis=doc.get("flow_axis", "Y"),
                frame_interval_us=float(doc.get("frame_interval_us", 1000.0)),
                orientation={v: dict(doc.get("orientation", {}).get(v, {})) for v in VIEWS},
                detection=DetectionConfig(**doc.get("detection", {})),
                tracking=TrackingConfig(**doc.get("tracking", {})),
                matching=MatchingConfig(**doc.get("matching", {})),
                output_dir=resolve(doc["output_dir"]) if doc.get("output_dir") else None,
                source=source,
            )
        except KeyError as exc:
            raise ManifestError(f"manifest is missing required key {exc}") from exc
        except TypeError as exc:
            raise ManifestError(f"manifest has an unknown setting: {exc}") from exc
        m.validate()
        return m

    def validate(self) -> None:
        for v, d in self.frame_dirs.items():
            if not d.is_dir():
                raise ManifestError(f"frame directory for view {v} does not exist: {d}")
        if not self.calibration.is_file():
            raise ManifestError(f"calibration profile does not exist: {self.calibration}")
        if self.flow_axis not in ("Y", "Z"):
            raise ManifestError("flow_axis must be Y or Z")
        positive = {
            "frame_interval_us": self.frame_interval_us,
            "tracking.gating_px": self.tracking.gating_px,
            "matching.sync_tolerance_us": self.matching.sync_tolerance_us,
            "matching.flow_tolerance_um": self.matching.flow_tolerance_um,
        }
        for k, v in positive.items():
            if not v > 0:
                raise ManifestError(f"{k} must be positive")
        if self.tracking.max_gap < 0 or self.detection.min_area < 1:
            raise ManifestError("max_gap must be >= 0 and min_area >= 1")
        for v, o in self.orientation.items():
            unknown = set(o) - {"rotate90", "flip_u", "flip_v"}
            if unknown:
                raise ManifestError(f"unknown orientation keys for view {v}: {sorted(unknown)}")
            if int(o.get("rotate90", 0)) != o.get("rotate90", 0):
                raise ManifestError("rotate90 must be an integer number of quarter turns")


@dataclass
class RunResult:
    records: list[ParticleRecord]
    losses: list[Loss]
    consistency: list[tuple[str, int, tuple[float, float, float], int]]

    @property
    def mean_deficit(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean([r.consistency_deficit_max for r in self.records]))


def analyze_run(manifest: RunManifest, threads: int = 1) -> RunResult:
    """Detect, track, match, reconstruct and measure every particle of a run."""
    profile = CalibrationProfile.load(manifest.calibration)
    tracks = {}
    timestamps = {}
    for view in VIEWS:
        frames = list(load_frames(manifest.frame_dirs[view], view, profile.scale[view],
                                  manifest.frame_interval_us, **manifest.orientation.get(view, {})))
        timestamps[view] = {f.index: f.timestamp for f in frames}
        dets = pmap(lambda fr: detect(fr, manifest.detection), frames, threads)
        by_frame = {fr.index: d for fr, d in zip(frames, dets)}
        tracks[view] = track_objects(by_frame, view, manifest.flow_axis, manifest.tracking)
        log.info("view %s: %d frames, %d tracks", view, len(frames), len(tracks[view]))

    matched, losses = match_views(tracks, manifest.matching, timestamps)
    counts = {v: len(tracks[v]) for v in VIEWS}
    ref = max(VIEWS, key=lambda v: (counts[v], -VIEWS.index(v)))
    ref_i = VIEWS.index(ref)
    # ids follow arrival order: reference-view tracks are numbered as they are born
    matched.sort(key=lambda m: (m.tracks[ref_i], m.frame, m.tracks))

    def work(item):
        k, m = item
        pid = f"{manifest.run_id}-{k:05d}"
        try:
            grid, report, ncomp = reconstruct_with_report(m.tri)
            rec = measure(grid, pid, manifest.run_id, "reconstructed", report.max_deficit,
                          frame_ref=(m.frame, m.frame, m.frame))
        except (EmptyIntersection, EmptyGrid, DegenerateInput) as exc:
            log.info("particle at frame %d rejected: %s", m.frame, exc)
            return None
        return rec, (pid, m.frame, report.per_view_deficit, ncomp)

    results = pmap(work, list(enumerate(matched)), threads)
    records, consistency = [], []
    for m, res in zip(matched, results):
        if res is None:
            losses.append(Loss(ref, m.tracks[ref_i], "too-small"))
        else:
            records.append(res[0])
            consistency.append(res[1])
    losses.sort(key=lambda l: (l.view, l.track_id))
    return RunResult(records, losses, consistency)


def write_run_logs(result: RunResult, run_id: str, out_dir) -> None:
    out_dir = Path(out_dir)
    _write_rows(out_dir / "losses.csv", "run_id,view,track_id,reason",
                ([run_id, l.view, str(l.track_id), l.reason] for l in result.losses))
    _write_rows(out_dir / "consistency.csv",
                "particle_id,frame,deficit_a,deficit_b,deficit_c,components",
                ([pid, str(f), fmt(d[0]), fmt(d[1]), fmt(d[2]), str(n)]
                 for pid, f, d, n in result.consistency))


# --- volumetric import ------------------------------------------------------------

def load_slice_stack(directory, threshold: int = 1) -> np.ndarray:
    """Stack ``slice_<index:06d>`` images into occupancy[x, y, z].

    Image columns map to X, rows to Y and the slice index to Z; pixels with
    value >= ``threshold`` are occupied.
    """
    paths = []
    for p in sorted(Path(directory).iterdir()):
        m = SLICE_NAME.match(p.name)
        if m:
            paths.append((int(m.group(1)), p))
    if not paths:
        raise InconsistentSliceDims(f"no slice_<index>.pgm/.png files in {directory}")
    paths.sort()
    slices = []
    for _, p in paths:
        img = read_image(p)
        if slices and img.shape != slices[0].shape:
            raise InconsistentSliceDims(f"{p} is {img.shape[1]}x{img.shape[0]}, expected "
                                        f"{slices[0].shape[1]}x{slices[0].shape[0]}")
        slices.append(img >= threshold)
    return np.stack([s.T for s in slices], axis=2)


def measure_components(grid: VoxelGrid, run_id: str, source: str = "voxel-import",
                       connectivity: int = 26, threads: int = 1) -> list[ParticleRecord]:
    comps = connected_components_3d(grid, connectivity)

    def work(item):
        k, comp = item
        try:
            return measure(comp, f"{run_id}-{k:05d}", run_id, source)
        except (DegenerateInput, EmptyGrid) as exc:
            log.info("component %d rejected: %s", k, exc)
            return None

    return [r for r in pmap(work, list(enumerate(comps)), threads) if r is not None]


def import_voxels(slice_dir, pitch: float, run_id: str, threads: int = 1) -> list[ParticleRecord]:
    occ = load_slice_stack(slice_dir)
    return measure_components(VoxelGrid(occ, pitch), run_id, threads=threads)


def write_slice_stack(grid: VoxelGrid, directory) -> None:
    """Inverse of :func:`load_slice_stack` (0/255 PGM slices)."""
    from PIL import Image

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    occ = grid.occupancy
    for z in range(occ.shape[2]):
        img = np.where(occ[:, :, z].T, 255, 0).astype(np.uint8)
        Image.fromarray(img, mode="L").save(d / f"slice_{z:06d}.pgm")
