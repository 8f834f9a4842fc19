"""Command-line entry points.

    particle3d calibrate --view-a A.pgm --view-b B.pgm --view-c C.pgm --out DIR
    particle3d analyze manifest.json [--out DIR]
    particle3d import-voxels SLICE_DIR --pitch 1.0 --run-id ct --out DIR
    particle3d simulate scene.json --out DIR [--seed 0]
    particle3d report records.csv [...] --out DIR
    particle3d compare run1.csv run2.csv [...] --out DIR [--sources]

Exit status: 0 success, 1 usage or data error, 2 calibration divergence.
"""
from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

from . import __version__
from .calibrate import CalibrationProfile, calibrate_from_sphere
from .errors import EmptyInput, Particle3DError, ScaleDivergence
from .stats import Summary, compare_runs, compare_sources, emit_reports, read_records, write_records

log = logging.getLogger("particle3d")


def _out_dir(args, fallback=None) -> Path:
    out = args.out or fallback
    if out is None:
        raise Particle3DError("no output directory given (use --out)")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_calibrate(args) -> int:
    from .stream import DetectionConfig, read_image

    images, names = {}, []
    for view, paths in (("A", args.view_a), ("B", args.view_b), ("C", args.view_c)):
        imgs = []
        for p in paths:
            if not Path(p).is_file():
                raise Particle3DError(f"image not found: {p}")
            imgs.append(read_image(p))
            names.append(Path(p).name)
        images[view] = imgs
    config = DetectionConfig(method=args.method, threshold=args.threshold, min_area=args.min_area)
    profile = calibrate_from_sphere(images, args.nominal, args.tolerance, config, tuple(names))
    out = _out_dir(args)
    profile.save(out / "calibration.txt")
    print(" ".join(f"scale_{v.lower()}={profile.scale[v]:.6g}" for v in "ABC"))
    return 0


def cmd_analyze(args) -> int:
    from .pipeline import RunManifest, analyze_run, write_run_logs

    manifest = RunManifest.load(args.manifest)
    out = _out_dir(args, manifest.output_dir)
    result = analyze_run(manifest, threads=args.threads)
    shutil.copyfile(args.manifest, out / "manifest.json")
    write_run_logs(result, manifest.run_id, out)
    emit_reports(Summary(result.records), out, figures=not args.no_figures)
    print(f"particles={len(result.records)} losses={len(result.losses)} "
          f"mean_deficit={result.mean_deficit:.6g}")
    return 0


def cmd_import_voxels(args) -> int:
    from .pipeline import import_voxels

    if not args.pitch > 0:
        raise Particle3DError("--pitch must be positive")
    records = import_voxels(args.slice_dir, args.pitch, args.run_id, threads=args.threads)
    out = _out_dir(args)
    write_records(records, out / "records.csv")
    print(f"particles={len(records)}")
    return 0


def cmd_simulate(args) -> int:
    import json

    from .synth import Scene, ground_truth_rows, write_scene_frames
    from .stats import _write_rows, fmt

    scene = Scene.load(args.scene)
    out = _out_dir(args)
    write_scene_frames(scene, out, seed=args.seed)
    CalibrationProfile({v: scene.pitch for v in "ABC"}, {v: 0.0 for v in "ABC"},
                       created_from=("synthetic",)).save(out / "calibration.txt")
    manifest = {
        "run_id": args.run_id,
        "frames": {v: v for v in "ABC"},
        "calibration": "calibration.txt",
        "flow_axis": scene.flow_axis,
        "frame_interval_us": scene.frame_interval_us,
        "output_dir": "analysis",
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    _write_rows(out / "truth.csv", "solid_id,kind,S_um,I_um,L_um,volume_um3",
                ([str(r["solid_id"]), r["kind"], fmt(r["S_um"]), fmt(r["I_um"]), fmt(r["L_um"]),
                  fmt(r["volume_um3"])] for r in ground_truth_rows(scene)))
    print(f"frames={scene.frames} solids={len(scene.solids)} seed={args.seed}")
    return 0


def _load_runs(paths):
    runs = []
    for p in paths:
        if not Path(p).is_file():
            raise Particle3DError(f"records file not found: {p}")
        runs.append(read_records(p))
    return runs


def cmd_report(args) -> int:
    records = [r for run in _load_runs(args.records) for r in run]
    if not records:
        raise EmptyInput("no records to report")
    out = _out_dir(args)
    emit_reports(Summary(records), out, figures=not args.no_figures)
    print(f"particles={len(records)}")
    return 0


def cmd_compare(args) -> int:
    runs = _load_runs(args.records)
    if len(runs) < 2:
        raise Particle3DError("compare needs at least two records files")
    labels = []
    for p, run in zip(args.records, runs):
        label = run[0].run_id if run else Path(p).stem
        labels.append(label if label not in labels else f"{label}_{len(labels)}")
    if args.sources:
        if len(runs) != 2:
            raise Particle3DError("--sources compares exactly two files: reconstructed, voxel-import")
        cmp = compare_sources(runs[0], runs[1])
    else:
        cmp = compare_runs(runs, labels)
    out = _out_dir(args)
    emit_reports(Summary([r for run in runs for r in run], comparison=cmp), out,
                 figures=not args.no_figures)
    if not args.no_figures:
        from .plotting import comparison_figures
        comparison_figures(runs, cmp.run_ids, out)
    for (i, j), d in sorted(cmp.ks.items()):
        print(f"{cmp.run_ids[i]} vs {cmp.run_ids[j]}: ks_d={d:.6g}")
    if cmp.median_bias is not None:
        print(f"median_bias_um={cmp.median_bias:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker cap (default 1)")
    common.add_argument("--seed", type=int, default=0, help="seed for stochastic steps (default 0)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="particle3d", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="pixel scale from sphere images")
    p.add_argument("--view-a", nargs="+", required=True)
    p.add_argument("--view-b", nargs="+", required=True)
    p.add_argument("--view-c", nargs="+", required=True)
    p.add_argument("--nominal", type=float, default=250.0, help="sphere diameter in μm")
    p.add_argument("--tolerance", type=float, default=2.5, help="diameter tolerance in μm")
    p.add_argument("--method", choices=("fixed", "otsu"), default="fixed")
    p.add_argument("--threshold", type=int, default=128)
    p.add_argument("--min-area", type=int, default=9)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("analyze", parents=[common], help="frames to particle records")
    p.add_argument("manifest")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("import-voxels", parents=[common], help="binary slice stack to records")
    p.add_argument("slice_dir")
    p.add_argument("--pitch", type=float, required=True, help="voxel size in μm")
    p.add_argument("--run-id", default="voxel")
    p.set_defaults(func=cmd_import_voxels)

    p = sub.add_parser("simulate", parents=[common], help="render a synthetic transit scene")
    p.add_argument("scene")
    p.add_argument("--run-id", default="sim")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", parents=[common], help="distribution reports from records")
    p.add_argument("records", nargs="+")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", parents=[common], help="compare runs or sources")
    p.add_argument("records", nargs="+")
    p.add_argument("--sources", action="store_true",
                   help="first file reconstructed, second voxel-import")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScaleDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (Particle3DError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
