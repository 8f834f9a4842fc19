"""Analytic test solids, rasterisation and synthetic transit scenes.

Scene files are JSON documents::

    {
      "image_size": [512, 512],          # width (u), height (v) in pixels
      "frames": 100,
      "pitch_um": 1.0,
      "flow_axis": "Y",
      "frame_interval_us": 1000,
      "background": 230, "foreground": 25,
      "noise": {"sigma": 8.0, "specks": 50},
      "solids": [
        {"kind": "ellipsoid", "params": {"a": 20, "b": 15, "c": 10},
         "euler_deg": [0, 0, 0],          # extrinsic xyz, optional
         "position_um": [64, -40, 64],    # centre at frame 0
         "velocity_um_per_frame": [0, 24, 0],
         "visible_views": ["A", "B", "C"]}   # optional
      ]
    }

The region of interest is the lattice box ``[0, width) x [0, width) x
[0, height)`` in pixels: view A images (Y, Z), view B (X, Z), view C (X, Y),
with image column = u and image row = v.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.spatial.transform import Rotation
from scipy.special import beta

from .errors import MemoryCap, OverlapDetected
from .geometry import VIEW_AXIS, Silhouette, VoxelGrid, project

KINDS = {
    "sphere": ("r",),
    "ellipsoid": ("a", "b", "c"),
    "box": ("w", "d", "h"),
    "superellipsoid": ("a", "b", "c", "e1", "e2"),
    "lprism": ("w", "d", "h", "notch"),
}
DEFAULT_VOXEL_CAP = 64_000_000


@dataclass(frozen=True)
class AnalyticSolid:
    """Solid with an exact inside test; lengths in μm.

    ``rotation`` maps local to world coordinates, ``translation`` is the
    world position of the local origin (the solid's centre).
    """

    kind: str
    params: dict
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown solid kind {self.kind!r}")
        missing = [k for k in KINDS[self.kind] if k not in self.params]
        if missing:
            raise ValueError(f"{self.kind} needs parameters {missing}")
        p = {k: float(self.params[k]) for k in KINDS[self.kind]}
        for k, v in p.items():
            if k in ("e1", "e2"):
                if not 0.2 <= v <= 2.0:
                    raise ValueError("superellipsoid exponents must lie in [0.2, 2.0]")
            elif not v > 0:
                raise ValueError(f"parameter {k} must be positive")
        if self.kind == "lprism" and not (p["notch"] < p["w"] and p["notch"] < p["d"]):
            raise ValueError("lprism notch must be smaller than w and d")
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))

    def moved(self, translation) -> "AnalyticSolid":
        return AnalyticSolid(self.kind, self.params, self.rotation, tuple(translation))

    def rotated(self, rotation) -> "AnalyticSolid":
        return AnalyticSolid(self.kind, self.params, np.asarray(rotation) @ self.rotation,
                             self.translation)

    @property
    def half_extents(self) -> np.ndarray:
        """Half sizes of the local axis-aligned bounding box."""
        p = self.params
        if self.kind == "sphere":
            return np.full(3, p["r"])
        if self.kind in ("ellipsoid", "superellipsoid"):
            return np.array([p["a"], p["b"], p["c"]])
        return np.array([p["w"], p["d"], p["h"]]) / 2

    @property
    def dims(self) -> tuple[float, float, float]:
        """Exact (S, I, L) of the minimal bounding box."""
        return tuple(sorted((2 * self.half_extents).tolist()))

    @property
    def volume(self) -> float:
        p = self.params
        if self.kind == "sphere":
            return 4 / 3 * math.pi * p["r"] ** 3
        if self.kind == "ellipsoid":
            return 4 / 3 * math.pi * p["a"] * p["b"] * p["c"]
        if self.kind == "box":
            return p["w"] * p["d"] * p["h"]
        if self.kind == "lprism":
            return (p["w"] * p["d"] - p["notch"] ** 2) * p["h"]
        e1, e2 = p["e1"], p["e2"]
        return 2 * p["a"] * p["b"] * p["c"] * e1 * e2 * beta(e1 / 2 + 1, e1) * beta(e2 / 2, e2 / 2)

    @property
    def is_convex(self) -> bool:
        if self.kind == "lprism":
            return False
        if self.kind == "superellipsoid":
            return self.params["e1"] <= 2 and self.params["e2"] <= 2
        return True

    def inside_local(self, x, y, z) -> np.ndarray:
        p = self.params
        if self.kind == "sphere":
            return x * x + y * y + z * z <= p["r"] ** 2
        if self.kind == "ellipsoid":
            return (x / p["a"]) ** 2 + (y / p["b"]) ** 2 + (z / p["c"]) ** 2 <= 1
        hw, hd, hh = p.get("w", 0) / 2, p.get("d", 0) / 2, p.get("h", 0) / 2
        if self.kind == "box":
            return (np.abs(x) <= hw) & (np.abs(y) <= hd) & (np.abs(z) <= hh)
        if self.kind == "lprism":
            n = p["notch"]
            block = (np.abs(x) <= hw) & (np.abs(y) <= hd) & (np.abs(z) <= hh)
            return block & ~((x > hw - n) & (y > hd - n))
        e1, e2 = p["e1"], p["e2"]
        xy = np.abs(x / p["a"]) ** (2 / e2) + np.abs(y / p["b"]) ** (2 / e2)
        return xy ** (e2 / e1) + np.abs(z / p["c"]) ** (2 / e1) <= 1

    def inside(self, points: np.ndarray) -> np.ndarray:
        """Inside test for world points of shape (..., 3)."""
        local = (np.asarray(points, dtype=float) - np.asarray(self.translation)) @ self.rotation
        return self.inside_local(local[..., 0], local[..., 1], local[..., 2])

    def world_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.half_extents
        corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * h
        w = corners @ self.rotation.T + np.asarray(self.translation)
        return w.min(0), w.max(0)


def solid_from_dict(d: dict) -> AnalyticSolid:
    if "rotation" in d:
        rot = np.asarray(d["rotation"], dtype=float)
    else:
        rot = Rotation.from_euler("xyz", d.get("euler_deg", [0, 0, 0]), degrees=True).as_matrix()
    return AnalyticSolid(d["kind"], d["params"], rot, tuple(d.get("position_um", (0, 0, 0))))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_solid(rng: np.random.Generator, kind: str | None = None,
                 size: tuple[float, float] = (8.0, 20.0), convex: bool = False,
                 posed: bool = True, max_exponent: float = 2.0) -> AnalyticSolid:
    """Draw a solid with half-extents in ``size`` (μm), centred at the origin.

    ``convex`` restricts the draw to the convex kinds; ``posed`` applies a
    uniformly random rotation. Superellipsoid exponents are drawn from
    ``[0.2, max_exponent]``; above 1 the solid grows pointed tips.
    """
    kinds = [k for k in KINDS if not (convex and k == "lprism")]
    kind = kind or kinds[rng.integers(len(kinds))]
    h = rng.uniform(*size, size=3)
    if kind == "sphere":
        params = {"r": h[0]}
    elif kind == "ellipsoid":
        params = dict(zip("abc", h))
    elif kind == "superellipsoid":
        params = dict(zip("abc", h)) | dict(zip(("e1", "e2"), rng.uniform(0.2, max_exponent, size=2)))
    else:
        params = dict(zip(("w", "d", "h"), 2 * h))
        if kind == "lprism":
            params["notch"] = rng.uniform(0.3, 0.7) * min(params["w"], params["d"])
    rot = random_rotation(rng) if posed else np.eye(3)
    return AnalyticSolid(kind, params, rot)


def voxelize(solid: AnalyticSolid, pitch: float, max_voxels: int = DEFAULT_VOXEL_CAP) -> VoxelGrid:
    """Centre-sampled occupancy on the global lattice of ``pitch``."""
    if not pitch > 0:
        raise ValueError("pitch must be positive")
    lo, hi = solid.world_bounds()
    i0 = np.ceil(lo / pitch - 0.5 - 1e-9).astype(int)
    i1 = np.floor(hi / pitch - 0.5 + 1e-9).astype(int) + 1
    shape = np.maximum(i1 - i0, 1)
    n = int(np.prod(shape.astype(np.int64)))
    if n > max_voxels:
        raise MemoryCap(f"voxelising needs {n} voxels, cap is {max_voxels}")
    axes = [(np.arange(i0[a], i0[a] + shape[a]) + 0.5) * pitch - solid.translation[a] for a in range(3)]
    rot = solid.rotation
    occ = np.empty(tuple(shape), dtype=bool)
    ys, zs = np.meshgrid(axes[1], axes[2], indexing="ij")
    for i, x in enumerate(axes[0]):
        # local = R^T (p - t)
        lx = rot[0, 0] * x + rot[1, 0] * ys + rot[2, 0] * zs
        ly = rot[0, 1] * x + rot[1, 1] * ys + rot[2, 1] * zs
        lz = rot[0, 2] * x + rot[1, 2] * ys + rot[2, 2] * zs
        occ[i] = solid.inside_local(lx, ly, lz)
    return VoxelGrid.from_index_origin(occ, pitch, i0)


def render_silhouette(solid: AnalyticSolid, view: str, pitch: float, antialias: bool = False,
                      max_voxels: int = DEFAULT_VOXEL_CAP) -> Silhouette:
    """Orthographic silhouette; antialiasing thresholds 4x4 subsamples at 50%."""
    axis = VIEW_AXIS[view]
    if not antialias:
        return project(voxelize(solid, pitch, max_voxels), axis)
    fine = project(voxelize(solid, pitch / 4, max_voxels), axis)
    off = np.asarray(fine.offset)
    c0 = np.floor_divide(off, 4)
    pad_lo = off - 4 * c0
    m = np.pad(fine.mask, [(pad_lo[0], 0), (pad_lo[1], 0)])
    pad_hi = [(-s) % 4 for s in m.shape]
    m = np.pad(m, [(0, pad_hi[0]), (0, pad_hi[1])])
    cov = m.reshape(m.shape[0] // 4, 4, m.shape[1] // 4, 4).sum(axis=(1, 3))
    return Silhouette(cov >= 8, pitch, view, tuple(c0))


# --- transit scenes -----------------------------------------------------------

@dataclass
class SceneSolid:
    solid: AnalyticSolid
    velocity: tuple[float, float, float]
    visible_views: tuple[str, ...] = ("A", "B", "C")

    def at(self, frame: int) -> AnalyticSolid:
        t = np.asarray(self.solid.translation) + frame * np.asarray(self.velocity)
        return self.solid.moved(t)


@dataclass
class Scene:
    solids: list[SceneSolid]
    frames: int = 100
    image_size: tuple[int, int] = (512, 512)
    pitch: float = 1.0
    flow_axis: str = "Y"
    frame_interval_us: float = 1000.0
    background: int = 230
    foreground: int = 25
    noise_sigma: float = 0.0
    specks: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        solids = []
        for s in d["solids"]:
            solids.append(SceneSolid(solid_from_dict(s),
                                     tuple(s.get("velocity_um_per_frame", (0, 0, 0))),
                                     tuple(s.get("visible_views", ("A", "B", "C")))))
        noise = d.get("noise", {})
        size = d.get("image_size", (512, 512))
        if isinstance(size, int):
            size = (size, size)
        return cls(solids, int(d.get("frames", 100)), (int(size[0]), int(size[1])),
                   float(d.get("pitch_um", 1.0)), d.get("flow_axis", "Y"),
                   float(d.get("frame_interval_us", 1000.0)), int(d.get("background", 230)),
                   int(d.get("foreground", 25)), float(noise.get("sigma", 0.0)),
                   int(noise.get("specks", 0)))

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        solids = []
        for s in self.solids:
            solids.append({
                "kind": s.solid.kind,
                "params": dict(s.solid.params),
                "rotation": s.solid.rotation.tolist(),
                "position_um": list(s.solid.translation),
                "velocity_um_per_frame": list(s.velocity),
                "visible_views": list(s.visible_views),
            })
        return {"image_size": list(self.image_size), "frames": self.frames, "pitch_um": self.pitch,
                "flow_axis": self.flow_axis, "frame_interval_us": self.frame_interval_us,
                "background": self.background, "foreground": self.foreground,
                "noise": {"sigma": self.noise_sigma, "specks": self.specks},
                "solids": solids}

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @property
    def roi_shape(self) -> tuple[int, int, int]:
        w, h = self.image_size
        return (w, w, h)


def _frame_masks(scene: Scene, frame: int) -> dict[str, np.ndarray]:
    w, h = scene.image_size
    roi = np.array(scene.roi_shape)
    # masks indexed [u, v]
    masks = {"A": np.zeros((w, h), bool), "B": np.zeros((w, h), bool), "C": np.zeros((w, h), bool)}
    placed: list[VoxelGrid] = []
    for s in scene.solids:
        lo, hi = s.at(frame).world_bounds()
        if np.any(hi / scene.pitch < 0) or np.any(lo / scene.pitch >= roi):
            continue
        g = voxelize(s.at(frame), scene.pitch)
        io = np.asarray(g.index_origin)
        a0 = np.clip(-io, 0, g.dims)
        a1 = np.clip(roi - io, 0, g.dims)
        if np.any(a1 <= a0):
            continue
        occ = g.occupancy[a0[0]:a1[0], a0[1]:a1[1], a0[2]:a1[2]]
        if not occ.any():
            continue
        clipped = VoxelGrid.from_index_origin(occ, scene.pitch, io + a0)
        for other in placed:
            if _grids_overlap(clipped, other):
                raise OverlapDetected(f"solids overlap at frame {frame}")
        placed.append(clipped)
        for view in s.visible_views:
            sil = project(clipped, VIEW_AXIS[view])
            u0, v0 = sil.offset
            masks[view][u0:u0 + sil.width, v0:v0 + sil.height] |= sil.mask
    return masks


def _grids_overlap(a: VoxelGrid, b: VoxelGrid) -> bool:
    ia, ib = np.asarray(a.index_origin), np.asarray(b.index_origin)
    lo = np.maximum(ia, ib)
    hi = np.minimum(ia + a.dims, ib + b.dims)
    if np.any(hi <= lo):
        return False
    sa = tuple(slice(l - o, h - o) for l, h, o in zip(lo, hi, ia))
    sb = tuple(slice(l - o, h - o) for l, h, o in zip(lo, hi, ib))
    return bool(np.any(a.occupancy[sa] & b.occupancy[sb]))


def compose_transit_scene(scene: Scene, seed: int = 0) -> dict[str, list[np.ndarray]]:
    """Render every frame of every view as 8-bit images indexed ``[row=v, col=u]``."""
    rng = np.random.default_rng(seed)
    out: dict[str, list[np.ndarray]] = {"A": [], "B": [], "C": []}
    for f in range(scene.frames):
        masks = _frame_masks(scene, f)
        for view in ("A", "B", "C"):
            img = np.where(masks[view].T, scene.foreground, scene.background).astype(float)
            if scene.noise_sigma > 0:
                img += rng.normal(0.0, scene.noise_sigma, img.shape)
            if scene.specks > 0:
                r = rng.integers(0, img.shape[0], scene.specks)
                c = rng.integers(0, img.shape[1], scene.specks)
                img[r, c] = scene.foreground
            out[view].append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
    return out


def write_scene_frames(scene: Scene, out_dir, seed: int = 0) -> dict[str, Path]:
    """Render and save frames as ``<view>/<view>_<index:06d>.pgm``."""
    from PIL import Image

    out_dir = Path(out_dir)
    frames = compose_transit_scene(scene, seed)
    dirs = {}
    for view, imgs in frames.items():
        d = out_dir / view
        d.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(imgs):
            Image.fromarray(img, mode="L").save(d / f"{view}_{i:06d}.pgm")
        dirs[view] = d
    return dirs


def make_transit_scene(n_particles: int = 20, seed: int = 0, frames: int = 100,
                       image_size: int = 512, pitch: float = 1.0, speed: float = 32.0,
                       launch_every: int = 4, semi_axes: tuple[float, float] = (18.0, 50.0),
                       axis_ratio: tuple[float, float] = (1.3, 1.6),
                       noise_sigma: float = 8.0, specks: int = 50) -> Scene:
    """Axis-aligned ellipsoids streaming along +Y through a cubic RoI.

    Particles launch every ``launch_every`` frames so consecutive ones are
    ``speed * launch_every`` apart along the flow; transverse (X, Z) positions
    cycle through a 4x4 lattice so view B (looking down the flow) never sees
    two of them superimposed.

    Consecutive semi-axes differ by a factor drawn from ``axis_ratio``: with
    nearly equal axes the minimal box of the voxelised particle may settle at
    45 degrees, which is a legitimate answer but not the ground-truth frame.
    """
    if semi_axes[0] * axis_ratio[1] ** 2 > semi_axes[1]:
        raise ValueError("semi_axes range too narrow for the requested axis_ratio")
    rng = np.random.default_rng(seed)
    slots = [(ix, iz) for iz in range(4) for ix in range(4)]
    cell = image_size / 4
    solids = []
    for k in range(n_particles):
        r1, r2 = rng.uniform(*axis_ratio, size=2)
        mid = rng.uniform(semi_axes[0] * r1, semi_axes[1] / r2)
        axes = rng.permutation([mid / r1, mid, mid * r2])
        ix, iz = slots[(5 * k) % 16]
        jitter = rng.uniform(-0.25, 0.25, size=2) * (cell - 2 * semi_axes[1])
        x = (ix + 0.5) * cell + jitter[0]
        z = (iz + 0.5) * cell + jitter[1]
        y = -axes[1] - 2.0 - speed * launch_every * k
        solid = AnalyticSolid("ellipsoid", {"a": axes[0], "b": axes[1], "c": axes[2]},
                              np.eye(3), (x * pitch, y * pitch, z * pitch))
        solids.append(SceneSolid(solid, (0.0, speed * pitch, 0.0)))
    return Scene(solids, frames, (image_size, image_size), pitch, "Y",
                 noise_sigma=noise_sigma, specks=specks)


def ground_truth_rows(scene: Scene) -> Iterable[dict]:
    for k, s in enumerate(scene.solids):
        S, I, L = s.solid.dims
        yield {"solid_id": k, "kind": s.solid.kind, "S_um": S, "I_um": I, "L_um": L,
               "volume_um3": s.solid.volume}
