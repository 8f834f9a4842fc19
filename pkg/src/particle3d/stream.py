"""From synchronised grayscale frame sequences to per-particle TriProjections.

Frames are stored as ``<view>_<index:06d>.pgm`` (binary P5) or ``.png``
(8-bit grayscale).  Image columns are the view's u axis and rows its v axis,
see :mod:`particle3d.geometry` for the axis convention.
"""
from __future__ import annotations

import logging
import re
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .geometry import VIEW_UV_AXES, VIEWS, Silhouette
from .reconstruct import TriProjection

log = logging.getLogger(__name__)

EIGHT = np.ones((3, 3), dtype=bool)
FRAME_NAME = re.compile(r"^([ABC])_(\d{6})\.(pgm|png)$")
LOSS_REASONS = ("missing-view", "ambiguous", "border-only", "too-small")


class DegenerateHistogram(UserWarning):
    """Otsu thresholding was asked to split a single-valued image."""


@dataclass(frozen=True)
class DetectionConfig:
    method: str = "fixed"
    threshold: int = 128
    polarity: str = "dark-object"
    min_area: int = 9
    fill_holes: bool = False


@dataclass(frozen=True)
class TrackingConfig:
    gating_px: float = 48.0
    max_gap: int = 3


@dataclass(frozen=True)
class MatchingConfig:
    sync_tolerance_us: float = 100.0
    flow_tolerance_um: float = 10.0


@dataclass(frozen=True)
class Frame:
    view: str
    index: int
    timestamp: float
    image: np.ndarray
    pitch: float


@dataclass(frozen=True)
class DetectedObject:
    view: str
    frame_index: int
    mask: Silhouette
    bbox_px: tuple[int, int, int, int]
    centroid_px: tuple[float, float]
    area_px: int
    touches_border: bool
    object_id: int = 0

    def center_um(self, axis: int) -> float:
        """Bounding-box centre along image axis 0 (u) or 1 (v), in μm."""
        lo, hi = (self.bbox_px[0], self.bbox_px[2]) if axis == 0 else (self.bbox_px[1], self.bbox_px[3])
        return (lo + hi + 1) / 2 * self.mask.pitch


@dataclass
class Track:
    track_id: int
    view: str
    items: list[tuple[int, DetectedObject]] = field(default_factory=list)
    velocity: float = 0.0

    @property
    def frames(self) -> list[int]:
        return [f for f, _ in self.items]

    def at(self, frame: int) -> Optional[DetectedObject]:
        for f, obj in self.items:
            if f == frame:
                return obj
        return None


@dataclass(frozen=True)
class MatchedParticle:
    tri: TriProjection
    frame: int
    tracks: tuple[int, int, int]


@dataclass(frozen=True)
class Loss:
    view: str
    track_id: int
    reason: str


# --- per-frame image processing ---------------------------------------------

def otsu_threshold(image: np.ndarray) -> int:
    """Threshold t maximising between-class variance of {< t} vs {>= t}.

    Ties resolve to the lowest t.  Raises ValueError on a single-valued image.
    """
    hist = np.bincount(np.asarray(image, dtype=np.uint8).ravel(), minlength=256).astype(float)
    if np.count_nonzero(hist) < 2:
        raise ValueError("single-valued histogram")
    levels = np.arange(256, dtype=float)
    w0 = np.cumsum(hist)[:-1]           # pixels with value < t, t = 1..255
    s0 = np.cumsum(hist * levels)[:-1]
    total, stotal = hist.sum(), (hist * levels).sum()
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (s0 / w0 - (stotal - s0) / w1) ** 2
    between = np.nan_to_num(between, nan=-1.0)
    return int(np.argmax(between)) + 1


def binarize(image: np.ndarray, method: str = "fixed", threshold: int = 128,
             polarity: str = "dark-object") -> np.ndarray:
    """Object mask: value < t for dark objects, value >= t for bright ones."""
    img = np.asarray(image)
    if method == "otsu":
        try:
            threshold = otsu_threshold(img)
        except ValueError:
            warnings.warn("single-valued image, nothing to threshold", DegenerateHistogram)
            return np.zeros(img.shape, dtype=bool)
    elif method != "fixed":
        raise ValueError(f"unknown threshold method {method!r}")
    if polarity == "dark-object":
        return img < threshold
    if polarity == "bright-object":
        return img >= threshold
    raise ValueError(f"unknown polarity {polarity!r}")


def denoise(mask: np.ndarray, min_area: int = 9, fill_holes: bool = False) -> np.ndarray:
    """Drop 8-connected components smaller than ``min_area``; optionally fill holes."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT)
    if n:
        sizes = np.bincount(labels.ravel())
        keep = sizes >= min_area
        keep[0] = False
        mask = keep[labels]
    if fill_holes:
        # background 4-connected to the border stays background
        mask = ndimage.binary_fill_holes(mask)
    return mask


def detect(frame: Frame, config: DetectionConfig = DetectionConfig()) -> list[DetectedObject]:
    """One object per surviving 8-connected blob, in raster order of first pixel."""
    binary = binarize(frame.image, config.method, config.threshold, config.polarity)
    clean = denoise(binary, config.min_area, config.fill_holes)
    labels, n = ndimage.label(clean, structure=EIGHT)
    rows, cols = frame.image.shape
    out = []
    for i, sl in enumerate(ndimage.find_objects(labels)):
        blob = labels[sl] == i + 1
        r0, c0 = sl[0].start, sl[1].start
        r1, c1 = sl[0].stop - 1, sl[1].stop - 1
        rr, cc = np.nonzero(blob)
        area = int(blob.sum())
        if area < config.min_area:
            continue
        sil = Silhouette(blob.T, frame.pitch, frame.view, (c0, r0))
        out.append(DetectedObject(
            view=frame.view, frame_index=frame.index, mask=sil,
            bbox_px=(c0, r0, c1, r1),
            centroid_px=(float(cc.mean() + c0), float(rr.mean() + r0)),
            area_px=area,
            touches_border=bool(r0 == 0 or c0 == 0 or r1 == rows - 1 or c1 == cols - 1),
            object_id=len(out)))
    return out


# --- tracking -----------------------------------------------------------------

def flow_image_axis(view: str, flow_axis: str) -> Optional[int]:
    """Image axis (0 = u, 1 = v) carrying the flow direction, or None."""
    world = "XYZ".index(flow_axis)
    uv = VIEW_UV_AXES[view]
    return uv.index(world) if world in uv else None


def track_objects(detections: dict[int, list[DetectedObject]], view: str, flow_axis: str = "Y",
                  config: TrackingConfig = TrackingConfig()) -> list[Track]:
    """Greedy nearest-centroid tracking with constant velocity along the flow.

    ``detections`` maps frame index to that frame's objects.  Pairs within the
    gating distance are assigned in order of (distance, track id, object id).
    """
    fa = flow_image_axis(view, flow_axis)
    tracks: list[Track] = []
    active: list[Track] = []
    for f in sorted(detections):
        objs = detections[f]
        active = [t for t in active if f - t.items[-1][0] <= config.max_gap + 1]
        pairs = []
        for t in active:
            last_f, last = t.items[-1]
            pred = list(last.centroid_px)
            if fa is not None:
                pred[fa] += t.velocity * (f - last_f)
            for o in objs:
                d = float(np.hypot(o.centroid_px[0] - pred[0], o.centroid_px[1] - pred[1]))
                if d <= config.gating_px:
                    pairs.append((d, t.track_id, o.object_id, t, o))
        pairs.sort(key=lambda p: p[:3])
        used_t, used_o = set(), set()
        for d, tid, oid, t, o in pairs:
            if tid in used_t or oid in used_o:
                continue
            used_t.add(tid)
            used_o.add(oid)
            last_f, last = t.items[-1]
            if fa is not None:
                t.velocity = (o.centroid_px[fa] - last.centroid_px[fa]) / (f - last_f)
            t.items.append((f, o))
        for o in objs:
            if o.object_id not in used_o:
                t = Track(len(tracks), view, [(f, o)])
                tracks.append(t)
                active.append(t)
    return tracks


# --- cross-view matching --------------------------------------------------------

def _compatible(a: DetectedObject, b: DetectedObject, c: DetectedObject, tol: float) -> bool:
    # A(u=Y, v=Z), B(u=X, v=Z), C(u=X, v=Y)
    return (abs(a.center_um(0) - c.center_um(1)) <= tol
            and abs(a.center_um(1) - b.center_um(1)) <= tol
            and abs(b.center_um(0) - c.center_um(0)) <= tol)


def match_views(tracks: dict[str, list[Track]], config: MatchingConfig = MatchingConfig(),
                timestamps: Optional[dict[str, dict[int, float]]] = None
                ) -> tuple[list[MatchedParticle], list[Loss]]:
    """Pair tracks across the three views and cut one TriProjection per particle.

    Losses are reported for the unmatched tracks of the reference view, the view
    with the most tracks (ties resolved A, B, C), so that matched + lost equals
    the reference track count.
    """
    by_frame: dict[str, dict[int, list[tuple[Track, DetectedObject]]]] = {}
    for view in VIEWS:
        fr: dict[int, list] = defaultdict(list)
        for t in tracks.get(view, []):
            for f, o in t.items:
                fr[f].append((t, o))
        by_frame[view] = fr

    def synced(f: int) -> bool:
        if timestamps is None:
            return True
        ts = [timestamps.get(v, {}).get(f) for v in VIEWS]
        if any(t is None for t in ts):
            return True
        return max(ts) - min(ts) <= config.sync_tolerance_us

    tol = config.flow_tolerance_um
    cand: dict[tuple[int, int, int], list[int]] = defaultdict(list)
    for f in sorted(set(by_frame["A"]) & set(by_frame["B"]) & set(by_frame["C"])):
        if not synced(f):
            continue
        for ta, a in by_frame["A"][f]:
            for tb, b in by_frame["B"][f]:
                if abs(a.center_um(1) - b.center_um(1)) > tol:
                    continue
                for tc, c in by_frame["C"][f]:
                    if _compatible(a, b, c, tol):
                        cand[(ta.track_id, tb.track_id, tc.track_id)].append(f)

    involvement: dict[tuple[str, int], set] = defaultdict(set)
    for key in cand:
        for view, tid in zip(VIEWS, key):
            involvement[(view, tid)].add(key)
    ambiguous = {k for k in cand if any(len(involvement[(v, tid)]) > 1 for v, tid in zip(VIEWS, k))}

    track_index = {view: {t.track_id: t for t in tracks.get(view, [])} for view in VIEWS}
    matched: list[MatchedParticle] = []
    border_only: set = set()
    for key in sorted(cand):
        if key in ambiguous:
            continue
        ta, tb, tc = (track_index[v][tid] for v, tid in zip(VIEWS, key))
        best = None
        for f in cand[key]:
            objs = (ta.at(f), tb.at(f), tc.at(f))
            if any(o.touches_border for o in objs):
                continue
            score = sum(o.area_px for o in objs)
            if best is None or score > best[0]:
                best = (score, f, objs)
        if best is None:
            border_only.add(key)
            continue
        _, f, (a, b, c) = best
        tri = TriProjection.aligned(a.mask, b.mask, c.mask)
        matched.append(MatchedParticle(tri, f, key))

    counts = {v: len(tracks.get(v, [])) for v in VIEWS}
    ref = max(VIEWS, key=lambda v: (counts[v], -VIEWS.index(v)))
    ref_i = VIEWS.index(ref)
    matched_ref = {m.tracks[ref_i] for m in matched}
    losses = []
    for t in tracks.get(ref, []):
        if t.track_id in matched_ref:
            continue
        keys = involvement.get((ref, t.track_id), set())
        if keys & ambiguous:
            reason = "ambiguous"
        elif keys & border_only:
            reason = "border-only"
        else:
            reason = "missing-view"
        losses.append(Loss(ref, t.track_id, reason))
    if ambiguous:
        log.warning("%d ambiguous cross-view candidates rejected", len(ambiguous))
    return matched, losses


# --- frame I/O ------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "P", "1"):
            raise ValueError(f"{path}: expected an 8-bit grayscale image, got mode {im.mode}")
        return np.asarray(im.convert("L"), dtype=np.uint8)


def list_frames(directory, view: str) -> list[tuple[int, Path]]:
    out = []
    for p in sorted(Path(directory).iterdir()):
        m = FRAME_NAME.match(p.name)
        if m and m.group(1) == view:
            out.append((int(m.group(2)), p))
    return out


def orient(image: np.ndarray, rotate90: int = 0, flip_u: bool = False, flip_v: bool = False) -> np.ndarray:
    """Undo a camera mounting: rotate by multiples of 90 degrees, then flip."""
    img = np.rot90(image, k=rotate90 % 4)
    if flip_u:
        img = img[:, ::-1]
    if flip_v:
        img = img[::-1, :]
    return np.ascontiguousarray(img)


def load_frames(directory, view: str, pitch: float, frame_interval_us: float = 1000.0,
                rotate90: int = 0, flip_u: bool = False, flip_v: bool = False) -> Iterable[Frame]:
    for idx, path in list_frames(directory, view):
        img = orient(read_image(path), rotate90, flip_u, flip_v)
        yield Frame(view, idx, idx * frame_interval_us, img, pitch)
