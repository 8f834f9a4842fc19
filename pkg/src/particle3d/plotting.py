"""Figure rendering for run reports (PNG files next to the CSV outputs)."""
from __future__ import annotations

import re
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .morphometry import ZINGG_THRESHOLD  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.5,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "svg.hashsalt": "particle3d",
}
# PNG metadata without version/date keys keeps files reproducible
PNG_META = {"Software": None}


def figsize(scale: float = 1.0, ratio: float = 0.75) -> tuple[float, float]:
    width = 5.0 * scale
    return width, width * ratio


def _save(fig, path: Path) -> Path:
    fig.savefig(path, metadata=PNG_META)
    plt.close(fig)
    return path


def psd_figure(curves: Sequence[tuple[str, np.ndarray, np.ndarray]], path) -> Path:
    """Cumulative size distribution curves, one per (label, sizes, cumulative)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        for label, sizes, cum in curves:
            ax.step(sizes, 100 * np.asarray(cum), where="post", label=label)
        ax.set_xlabel("Intermediate dimension I (μm)")
        ax.set_ylabel("Cumulative number (%)")
        ax.set_ylim(0, 100)
        if len(curves) > 1:
            ax.legend(frameon=False)
        return _save(fig, Path(path))


def zingg_figure(counts: np.ndarray, path, title: str | None = None,
                 threshold: float = ZINGG_THRESHOLD) -> Path:
    """Number density over the elongation (I/L) x flatness (S/I) plane."""
    n_e, n_f = counts.shape
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(ratio=0.9))
        # x axis flatness, y axis elongation
        img = ax.pcolormesh(np.linspace(0, 1, n_f + 1), np.linspace(0, 1, n_e + 1),
                            np.ma.masked_equal(counts, 0), cmap="viridis", shading="flat")
        fig.colorbar(img, ax=ax, label="Number of particles")
        ax.axvline(threshold, color="k", lw=0.8)
        ax.axhline(threshold, color="k", lw=0.8)
        for x, y, name in ((0.83, 0.83, "Compact"), (0.33, 0.83, "Flat"),
                           (0.83, 0.33, "Elongated"), (0.33, 0.33, "Bladed")):
            ax.text(x, y, name, ha="center", va="center", fontsize=8, color="0.3")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_aspect("equal")
        ax.set_xlabel("Flatness S/I")
        ax.set_ylabel("Elongation I/L")
        if title:
            ax.set_title(title)
        return _save(fig, Path(path))


def descriptor_figure(records, path) -> Path:
    """Histograms of area, volume and the three shape indices."""
    panels = [
        ("Surface area (μm²)", [r.area for r in records]),
        ("Volume (μm³)", [r.volume for r in records]),
        ("True sphericity", [r.indices.sphericity_wadell for r in records]),
        ("Intercept sphericity", [r.indices.sphericity_intercept for r in records]),
        ("Convexity", [r.indices.convexity for r in records]),
    ]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 5, figsize=(15, 2.8))
        for ax, (label, values) in zip(axes, panels):
            values = np.asarray(values, float)
            lo, hi = values.min(), values.max()
            # near-constant columns (round-off spread only) get a unit-width window
            if hi - lo <= 1e-9 * max(1.0, abs(hi)):
                lo, hi = lo - 0.5, hi + 0.5
            ax.hist(values, bins=min(20, max(5, len(values) // 4)), range=(lo, hi),
                    color="0.4", edgecolor="w")
            ax.set_xlabel(label)
        axes[0].set_ylabel("Count")
        return _save(fig, Path(path))


def run_figures(records, psd, zingg, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    return [
        psd_figure([(records[0].run_id, psd.sizes, psd.cumulative)], out_dir / "psd.png"),
        zingg_figure(zingg.counts, out_dir / "zingg.png"),
        descriptor_figure(records, out_dir / "descriptors.png"),
    ]


def comparison_figures(runs: Sequence[Sequence], labels: Sequence[str], out_dir) -> list[Path]:
    """Overlaid size distributions plus one Zingg chart per run."""
    from .stats import build_psd, build_zingg_density

    out_dir = Path(out_dir)
    curves = []
    paths = []
    for label, recs in zip(labels, runs):
        psd = build_psd(recs)
        curves.append((label, psd.sizes, psd.cumulative))
        z = build_zingg_density(recs)
        safe = re.sub(r"[^\w.-]", "_", label)
        paths.append(zingg_figure(z.counts, out_dir / f"zingg_{safe}.png", title=label))
    paths.insert(0, psd_figure(curves, out_dir / "psd_comparison.png"))
    return paths
