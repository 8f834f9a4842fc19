"""Run-level aggregates: size distributions, Zingg density, run comparisons,
and their delimited-text serialisation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput, EmptyRun
from .morphometry import ZINGG_CLASSES, ParticleRecord, ShapeIndices

RECORD_HEADER = ("particle_id,run_id,source,S_um,I_um,L_um,volume_um3,area_um2,elongation,"
                 "flatness,zingg_class,sphericity_wadell,sphericity_intercept,convexity,"
                 "consistency_deficit_max")
PSD_HEADER = "size_um,cumulative_fraction"
ZINGG_HEADER = "elongation_bin_low,flatness_bin_low,count"
COMPARISON_HEADER = "run_a,run_b,n_a,n_b,ks_d,d10_delta_um,d50_delta_um,d90_delta_um"
RUN_HEADER = "run_id,count,D10_um,D50_um,D90_um," + ",".join(c.lower() for c in ZINGG_CLASSES)


def fmt(x: float) -> str:
    """Six significant digits, locale-free."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if not math.isfinite(x):
        return "nan"
    s = f"{x:.6g}"
    return "0" if s == "-0" else s


# --- size distribution --------------------------------------------------------

def size_metric(record: ParticleRecord, metric: str = "intermediate") -> float:
    if metric == "intermediate":
        return record.I
    if metric == "volume-equivalent-diameter":
        return (6 * record.volume / math.pi) ** (1 / 3)
    raise ValueError(f"unknown size metric {metric!r}")


@dataclass(frozen=True)
class PsdCurve:
    sizes: np.ndarray
    cumulative: np.ndarray
    d10: float
    d50: float
    d90: float

    def quantile(self, q: float) -> float:
        return interpolate_quantile(self.sizes, self.cumulative, q)


def interpolate_quantile(sizes: np.ndarray, cumulative: np.ndarray, q: float) -> float:
    """Linear interpolation of the size at cumulative fraction q, clamped to the data range."""
    if q <= cumulative[0]:
        return float(sizes[0])
    if q >= cumulative[-1]:
        return float(sizes[-1])
    return float(np.interp(q, cumulative, sizes))


def build_psd(records: Sequence[ParticleRecord], size: str = "intermediate",
              weighting: str = "number") -> PsdCurve:
    """Midpoint empirical CDF, F_i = (W_{<i} + w_i / 2) / W.

    The stored curve ends at exactly 1.0 at the largest size.
    """
    if not records:
        raise EmptyInput("cannot build a size distribution from zero records")
    x = np.array([size_metric(r, size) for r in records], dtype=float)
    if weighting == "number":
        w = np.ones_like(x)
    elif weighting == "volume":
        w = np.array([r.volume for r in records], dtype=float)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    order = np.lexsort((w, x))
    x, w = x[order], w[order]
    total = w.sum()
    mid = (np.cumsum(w) - w / 2) / total
    q = [interpolate_quantile(x, mid, p) for p in (0.1, 0.5, 0.9)]
    cumulative = np.cumsum(w) / total
    cumulative[-1] = 1.0
    return PsdCurve(x, cumulative, q[0], q[1], q[2])


def ks_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov D = sup |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptyInput("KS statistic needs two non-empty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


# --- Zingg density ---------------------------------------------------------------

@dataclass(frozen=True)
class ZinggDensity:
    counts: np.ndarray          # [elongation bin, flatness bin]
    total: int
    zero_flagged: int = 0

    @property
    def n_e(self) -> int:
        return self.counts.shape[0]

    @property
    def n_f(self) -> int:
        return self.counts.shape[1]


def _bin(value: float, n: int) -> tuple[int, bool]:
    """Bin i holds (i/n, (i+1)/n]; zero goes to bin 0 and is flagged."""
    if value <= 0:
        return 0, True
    i = math.ceil(value * n - 1e-9) - 1
    return min(max(i, 0), n - 1), False


def build_zingg_density(records: Sequence[ParticleRecord], n_e: int = 10, n_f: int = 10) -> ZinggDensity:
    if not records:
        raise EmptyInput("cannot bin zero records")
    counts = np.zeros((n_e, n_f), dtype=int)
    flagged = 0
    for r in records:
        i, fi = _bin(r.indices.elongation, n_e)
        j, fj = _bin(r.indices.flatness, n_f)
        counts[i, j] += 1
        flagged += fi or fj
    return ZinggDensity(counts, len(records), flagged)


def class_fractions(records: Sequence[ParticleRecord]) -> dict[str, float]:
    n = len(records)
    return {c: sum(r.indices.zingg_class == c for r in records) / n for c in ZINGG_CLASSES}


# --- comparisons -------------------------------------------------------------------

@dataclass
class RunComparison:
    run_ids: list[str]
    counts: list[int]
    quantiles: list[tuple[float, float, float]]
    ks: dict[tuple[int, int], float]
    class_fractions: list[dict[str, float]]
    median_bias: float | None = None
    particle_bias: dict[str, dict[str, float]] = field(default_factory=dict)
    convexity_flags: list[str] = field(default_factory=list)

    def ks_d(self, i: int, j: int) -> float:
        return self.ks[(min(i, j), max(i, j))]


def compare_runs(runs: Sequence[Sequence[ParticleRecord]], run_ids: Sequence[str] | None = None
                 ) -> RunComparison:
    """Counts, D10/D50/D90, pairwise KS D on the intermediate dimension, class fractions."""
    if len(runs) < 2:
        raise ValueError("need at least two runs to compare")
    for k, r in enumerate(runs):
        if not r:
            raise EmptyRun(f"run {k} has no records")
    if run_ids is None:
        run_ids = [r[0].run_id for r in runs]
    sizes = [[rec.I for rec in r] for r in runs]
    psds = [build_psd(r) for r in runs]
    ks = {(i, j): ks_statistic(sizes[i], sizes[j]) for i, j in combinations(range(len(runs)), 2)}
    return RunComparison(list(run_ids), [len(r) for r in runs],
                         [(p.d10, p.d50, p.d90) for p in psds], ks,
                         [class_fractions(r) for r in runs])


def compare_sources(reconstructed: Sequence[ParticleRecord], voxel_import: Sequence[ParticleRecord],
                    convexity_gap: float = 0.05) -> RunComparison:
    """Reconstructed-vs-volumetric comparison.

    ``median_bias`` is median(I, reconstructed) - median(I, voxel import).
    Records sharing a ``particle_id`` are paired and their per-particle signed
    differences of S, I, L, volume, intercept sphericity and convexity kept in
    ``particle_bias``.  Pairs where the volumetric convexity falls below the
    reconstructed one by more than ``convexity_gap`` are listed in
    ``convexity_flags``: the silhouette route cannot see those concavities.
    """
    cmp = compare_runs([reconstructed, voxel_import], ["reconstructed", "voxel-import"])
    cmp.median_bias = float(np.median([r.I for r in reconstructed]) - np.median([r.I for r in voxel_import]))
    direct = {r.particle_id: r for r in voxel_import}
    for r in reconstructed:
        v = direct.get(r.particle_id)
        if v is None:
            continue
        cmp.particle_bias[r.particle_id] = {
            "S": r.S - v.S, "I": r.I - v.I, "L": r.L - v.L, "volume": r.volume - v.volume,
            "sphericity_intercept": r.indices.sphericity_intercept - v.indices.sphericity_intercept,
            "convexity": r.indices.convexity - v.indices.convexity,
        }
        if r.indices.convexity - v.indices.convexity > convexity_gap:
            cmp.convexity_flags.append(r.particle_id)
    return cmp


# --- serialisation ----------------------------------------------------------------------

def record_row(r: ParticleRecord) -> list[str]:
    i = r.indices
    return [r.particle_id, r.run_id, r.source, fmt(r.S), fmt(r.I), fmt(r.L), fmt(r.volume),
            fmt(r.area), fmt(i.elongation), fmt(i.flatness), i.zingg_class, fmt(i.sphericity_wadell),
            fmt(i.sphericity_intercept), fmt(i.convexity), fmt(r.consistency_deficit_max)]


def _write_rows(path: Path, header: str, rows: Iterable[Sequence[str]]) -> None:
    buf = io.StringIO()
    buf.write(header + "\n")
    for row in rows:
        buf.write(",".join(row) + "\n")
    path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def write_records(records: Sequence[ParticleRecord], path) -> None:
    ordered = sorted(records, key=lambda r: (r.run_id, r.particle_id))
    _write_rows(Path(path), RECORD_HEADER, (record_row(r) for r in ordered))


def read_records(path) -> list[ParticleRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or ",".join(reader.fieldnames) != RECORD_HEADER:
            raise ValueError(f"{path}: not a records CSV (unexpected header)")
        out = []
        for row in reader:
            idx = ShapeIndices(float(row["elongation"]), float(row["flatness"]), row["zingg_class"],
                               float(row["sphericity_wadell"]), float(row["sphericity_intercept"]),
                               float(row["convexity"]))
            out.append(ParticleRecord(row["particle_id"], row["run_id"], row["source"],
                                      float(row["S_um"]), float(row["I_um"]), float(row["L_um"]),
                                      float(row["volume_um3"]), float(row["area_um2"]), idx,
                                      float(row["consistency_deficit_max"])))
    return out


def write_psd(psd: PsdCurve, path) -> None:
    _write_rows(Path(path), PSD_HEADER,
                ([fmt(s), fmt(c)] for s, c in zip(psd.sizes, psd.cumulative)))


def write_zingg(z: ZinggDensity, path) -> None:
    rows = []
    for i in range(z.n_e):
        for j in range(z.n_f):
            rows.append([fmt(i / z.n_e), fmt(j / z.n_f), str(int(z.counts[i, j]))])
    _write_rows(Path(path), ZINGG_HEADER, rows)


def write_comparison(cmp: RunComparison, path) -> None:
    rows = []
    for (i, j), d in sorted(cmp.ks.items()):
        qi, qj = cmp.quantiles[i], cmp.quantiles[j]
        rows.append([cmp.run_ids[i], cmp.run_ids[j], str(cmp.counts[i]), str(cmp.counts[j]), fmt(d),
                     fmt(qj[0] - qi[0]), fmt(qj[1] - qi[1]), fmt(qj[2] - qi[2])])
    _write_rows(Path(path), COMPARISON_HEADER, rows)


def write_run_table(cmp: RunComparison, path) -> None:
    rows = []
    for k, rid in enumerate(cmp.run_ids):
        q = cmp.quantiles[k]
        rows.append([rid, str(cmp.counts[k]), fmt(q[0]), fmt(q[1]), fmt(q[2])]
                    + [fmt(cmp.class_fractions[k][c]) for c in ZINGG_CLASSES])
    _write_rows(Path(path), RUN_HEADER, rows)


def write_particle_bias(cmp: RunComparison, path) -> None:
    keys = ("S", "I", "L", "volume", "sphericity_intercept", "convexity")
    rows = []
    for pid in sorted(cmp.particle_bias):
        b = cmp.particle_bias[pid]
        rows.append([pid] + [fmt(b[k]) for k in keys] + ["1" if pid in cmp.convexity_flags else "0"])
    header = "particle_id," + ",".join(f"{k}_bias" for k in keys) + ",concavity_hidden"
    _write_rows(Path(path), header, rows)


def write_plot_data(psd: PsdCurve, z: ZinggDensity, out_dir) -> None:
    """Whitespace-delimited files for gnuplot (``plot``/``splot ... with pm3d``)."""
    out_dir = Path(out_dir)
    lines = ["# size_um cumulative_fraction"]
    lines += [f"{fmt(s)} {fmt(c)}" for s, c in zip(psd.sizes, psd.cumulative)]
    (out_dir / "psd.dat").write_text("\n".join(lines) + "\n")
    lines = ["# elongation_bin_low flatness_bin_low count"]
    for i in range(z.n_e):
        for j in range(z.n_f):
            lines.append(f"{fmt(i / z.n_e)} {fmt(j / z.n_f)} {int(z.counts[i, j])}")
        lines.append("")
    (out_dir / "zingg.dat").write_text("\n".join(lines) + "\n")


@dataclass
class Summary:
    """Everything needed to emit one run's report files."""

    records: list[ParticleRecord]
    comparison: RunComparison | None = None
    size: str = "intermediate"
    weighting: str = "number"
    n_e: int = 10
    n_f: int = 10


def emit_reports(summary: Summary, out_dir, figures: bool = True) -> list[Path]:
    """Write records, PSD, Zingg and comparison CSVs, gnuplot data and figures."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        from .errors import Particle3DError
        raise Particle3DError(f"cannot create output directory {out_dir}: {exc}") from exc
    written = []
    write_records(summary.records, out_dir / "records.csv")
    written.append(out_dir / "records.csv")
    if summary.records:
        psd = build_psd(summary.records, summary.size, summary.weighting)
        z = build_zingg_density(summary.records, summary.n_e, summary.n_f)
        write_psd(psd, out_dir / "psd.csv")
        write_zingg(z, out_dir / "zingg.csv")
        write_plot_data(psd, z, out_dir)
        written += [out_dir / n for n in ("psd.csv", "zingg.csv", "psd.dat", "zingg.dat")]
        if figures:
            from . import plotting
            written += plotting.run_figures(summary.records, psd, z, out_dir)
    else:
        _write_rows(out_dir / "psd.csv", PSD_HEADER, [])
        _write_rows(out_dir / "zingg.csv", ZINGG_HEADER, [])
        written += [out_dir / "psd.csv", out_dir / "zingg.csv"]
    if summary.comparison is not None:
        write_comparison(summary.comparison, out_dir / "comparison.csv")
        write_run_table(summary.comparison, out_dir / "runs.csv")
        written += [out_dir / "comparison.csv", out_dir / "runs.csv"]
        if summary.comparison.particle_bias:
            write_particle_bias(summary.comparison, out_dir / "particle_bias.csv")
            written.append(out_dir / "particle_bias.csv")
    return written
