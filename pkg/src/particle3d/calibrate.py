"""Per-camera pixel scale from images of precision spheres."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import MultipleObjects, NoObject, ScaleDivergence
from .stream import DetectionConfig, Frame, detect

NOMINAL_DIAMETER_UM = 250.0
NOMINAL_TOLERANCE_UM = 2.5
# views may disagree by this many relative manufacturing tolerances
DIVERGENCE_FACTOR = 3.0

PROFILE_KEYS = ("scale_a_um_per_px", "scale_b_um_per_px", "scale_c_um_per_px",
                "nominal_diameter_um", "nominal_tolerance_um",
                "residual_a", "residual_b", "residual_c")


@dataclass(frozen=True)
class CalibrationProfile:
    scale: dict
    residual: dict
    nominal_diameter: float = NOMINAL_DIAMETER_UM
    nominal_tolerance: float = NOMINAL_TOLERANCE_UM
    created_from: tuple = ()

    def __post_init__(self):
        for v in "ABC":
            if not self.scale.get(v, 0) > 0:
                raise ValueError(f"scale for view {v} must be positive")

    def to_text(self) -> str:
        values = {
            "scale_a_um_per_px": self.scale["A"], "scale_b_um_per_px": self.scale["B"],
            "scale_c_um_per_px": self.scale["C"],
            "nominal_diameter_um": self.nominal_diameter,
            "nominal_tolerance_um": self.nominal_tolerance,
            "residual_a": self.residual["A"], "residual_b": self.residual["B"],
            "residual_c": self.residual["C"],
        }
        lines = [f"{k} = {values[k]!r}" for k in PROFILE_KEYS]
        if self.created_from:
            lines.append("created_from = " + ";".join(str(s) for s in self.created_from))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "CalibrationProfile":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        missing = [k for k in PROFILE_KEYS if k not in kv]
        if missing:
            raise ValueError(f"calibration profile is missing keys {missing}")
        scale = {v: float(kv[f"scale_{v.lower()}_um_per_px"]) for v in "ABC"}
        residual = {v: float(kv[f"residual_{v.lower()}"]) for v in "ABC"}
        created = tuple(s for s in kv.get("created_from", "").split(";") if s)
        return cls(scale, residual, float(kv["nominal_diameter_um"]),
                   float(kv["nominal_tolerance_um"]), created)

    @classmethod
    def load(cls, path) -> "CalibrationProfile":
        return cls.from_text(Path(path).read_text())


def equivalent_diameter(area_px: float) -> float:
    return 2.0 * math.sqrt(area_px / math.pi)


def calibrate_from_diameters(diameters_px: Mapping[str, Sequence[float]],
                             nominal_diameter: float = NOMINAL_DIAMETER_UM,
                             nominal_tolerance: float = NOMINAL_TOLERANCE_UM,
                             created_from: tuple = ()) -> CalibrationProfile:
    """Scale = mean of nominal / d over a view's images; residual = worst relative error."""
    scale, residual = {}, {}
    for view in "ABC":
        d = np.asarray(diameters_px[view], dtype=float)
        if d.size == 0:
            raise NoObject(f"no sphere measurement for view {view}")
        s = float(np.mean(nominal_diameter / d))
        scale[view] = s
        residual[view] = float(np.max(np.abs(d * s - nominal_diameter)) / nominal_diameter)
    limit = DIVERGENCE_FACTOR * nominal_tolerance / nominal_diameter
    values = list(scale.values())
    spread = max(values) / min(values) - 1.0
    if spread > limit:
        raise ScaleDivergence(
            f"view scales {', '.join(f'{v}={scale[v]:.6g}' for v in 'ABC')} differ by "
            f"{spread:.2%}, limit {limit:.2%}")
    return CalibrationProfile(scale, residual, nominal_diameter, nominal_tolerance, created_from)


def sphere_diameter_px(image: np.ndarray, config: DetectionConfig = DetectionConfig(),
                       view: str = "A") -> float:
    """Equivalent-area diameter of the single sphere silhouette in ``image``."""
    objs = detect(Frame(view, 0, 0.0, np.asarray(image), 1.0), config)
    if not objs:
        raise NoObject(f"no sphere found in view {view} image")
    if len(objs) > 1:
        raise MultipleObjects(f"{len(objs)} objects found in view {view} image, expected 1")
    return equivalent_diameter(objs[0].area_px)


def calibrate_from_sphere(images: Mapping[str, Sequence[np.ndarray] | np.ndarray],
                          nominal_diameter: float = NOMINAL_DIAMETER_UM,
                          nominal_tolerance: float = NOMINAL_TOLERANCE_UM,
                          config: DetectionConfig = DetectionConfig(),
                          created_from: tuple = ()) -> CalibrationProfile:
    """Calibrate from one or more sphere images per view."""
    diameters = {}
    for view in "ABC":
        imgs = images[view]
        if isinstance(imgs, np.ndarray) and imgs.ndim == 2:
            imgs = [imgs]
        diameters[view] = [sphere_diameter_px(im, config, view) for im in imgs]
    return calibrate_from_diameters(diameters, nominal_diameter, nominal_tolerance, created_from)


def disc_image(diameter_px: float, size: int | None = None, background: int = 230,
               foreground: int = 25, antialias: bool = False) -> np.ndarray:
    """Rendered dark disc centred in a bright square image."""
    if size is None:
        size = int(math.ceil(diameter_px)) + 20
    c = size / 2.0
    r = diameter_px / 2.0
    if antialias:
        sub = (np.arange(size * 4) + 0.5) / 4
        yy, xx = np.meshgrid(sub, sub, indexing="ij")
        inside = (xx - c) ** 2 + (yy - c) ** 2 <= r * r
        cover = inside.reshape(size, 4, size, 4).mean(axis=(1, 3))
        inside = cover >= 0.5
    else:
        idx = np.arange(size) + 0.5
        yy, xx = np.meshgrid(idx, idx, indexing="ij")
        inside = (xx - c) ** 2 + (yy - c) ** 2 <= r * r
    return np.where(inside, foreground, background).astype(np.uint8)
