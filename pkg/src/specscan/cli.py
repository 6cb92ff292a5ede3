"""Command-line entry point.

Exit codes: 0 success, 2 I/O error, 3 validation error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import cloudio
from .config import load_config
from .errors import (
    ConfigError,
    DegenerateNeighborhood,
    EmptyCloud,
    NoCluster,
    NoConvergence,
    NoOverlap,
    PlanSceneMismatch,
    ScanError,
    TooFewPoints,
    Unreachable,
    ZeroNorm,
)
from .kinematics import PlatformPose, forward_kinematics, stewart_ik
from .planning import ScanPlan, cloud_digest, plan_viewpoints
from .pointcloud import cluster_largest, crop, remove_plane_ransac
from .simulator import MODES, ScanResult, compare_scans, ground_truth_scan, run_scan, scene_from_spec
from .spectral import CalibrationPair, Spectrum, calibrate_spectrum, median_stack, read_spectra_csv, write_spectra_csv

log = logging.getLogger("specscan")

EXIT_IO, EXIT_VALIDATION, EXIT_NUMERICAL = 2, 3, 4


class CommandError(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


def _out_dir(args):
    d = Path(args.out or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _floats(text, n, what):
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise CommandError(EXIT_VALIDATION, f"{what}: expected {n} numbers, got {text!r}")
    if len(vals) != n:
        raise CommandError(EXIT_VALIDATION, f"{what}: expected {n} numbers, got {len(vals)}")
    return vals


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_scene(args, cfg):
    spec = {
        "kind": args.kind,
        "params": json.loads(args.params) if args.params else {},
        "density": args.density,
        "seed": args.seed,
        "sampling": args.sampling,
        "instrument": cfg.instrument.to_dict(),
    }
    scene = scene_from_spec(spec)
    out = _out_dir(args)
    _write_json(out / "scene.json", spec)
    cloudio.write_ply(out / "cloud.ply", scene.cloud)
    print(f"{len(scene.cloud)} points, materials: {', '.join(scene.material_names)}")


def cmd_preprocess(args, cfg):
    cloud = cloudio.read_cloud(args.input)
    pre = cfg.preprocess
    report = {"input_points": len(cloud)}
    stage = "crop"
    try:
        if pre.crop is not None and not args.skip_crop:
            n = len(cloud)
            cloud = crop(cloud, pre.crop)
            report["crop_removed"] = n - len(cloud)
        stage = "plane"
        if not args.skip_plane:
            n = len(cloud)
            cloud, (normal, offset) = remove_plane_ransac(cloud, pre.plane_dist, pre.ransac_iters, args.seed)
            report["plane_removed"] = n - len(cloud)
            report["plane"] = {"normal": [float(v) for v in normal], "offset": float(offset)}
        stage = "cluster"
        if not args.skip_cluster:
            n = len(cloud)
            cloud = cluster_largest(cloud, pre.cluster_eps, pre.cluster_min_points)
            report["cluster_removed"] = n - len(cloud)
    except ScanError as exc:
        raise CommandError(EXIT_NUMERICAL, f"preprocess[{stage}]: {exc}") from exc
    report["output_points"] = len(cloud)
    out = _out_dir(args)
    suffix = Path(args.input).suffix.lower() or ".ply"
    cloudio.write_cloud(out / f"cleaned{suffix}", cloud)
    _write_json(out / "preprocess_report.json", report)
    print(json.dumps(report, sort_keys=True))


def cmd_plan(args, cfg):
    cloud = cloudio.read_cloud(args.cloud)
    overrides = {}
    if args.voxel_size is not None:
        overrides["voxel_size"] = args.voxel_size
    if args.scan_dist is not None:
        overrides["scan_dist"] = args.scan_dist
    if args.arm_offset is not None:
        overrides["arm_offset"] = tuple(args.arm_offset)
    if args.order is not None:
        overrides["order"] = args.order
    try:
        pcfg = dataclasses.replace(cfg.planning, **overrides)
    except ValueError as exc:
        raise CommandError(EXIT_VALIDATION, f"plan: {exc}") from exc
    plan = plan_viewpoints(cloud, pcfg, cfg.geometry)
    out = _out_dir(args)
    plan.save(out / "plan.jsonl")
    print(f"{len(plan.viewpoints)} viewpoints, {plan.infeasible_count} infeasible")


def cmd_scan(args, cfg):
    spec = json.loads(Path(args.scene).read_text())
    scene = scene_from_spec(spec)
    plan = ScanPlan.load(args.plan)
    sim = dataclasses.replace(cfg.simulation, seed=args.seed)
    if args.mode == "ground_truth":
        if plan.source_digest and plan.source_digest != cloud_digest(scene.cloud):
            raise PlanSceneMismatch("plan was generated from a different point cloud")
        result = ground_truth_scan(scene, plan)
    else:
        result = run_scan(scene, plan, args.mode, sim, cfg.geometry)
    result.save(_out_dir(args))
    print(f"mode {result.mode}: {len(result.records)} executed, {result.skipped} skipped")


def cmd_compare(args, cfg):
    a = ScanResult.load(args.a)
    b = ScanResult.load(args.b)
    comp = compare_scans(a, b)
    out = _out_dir(args)
    comp.write_csv(out / "sam.csv")
    summary = {"a": a.mode, "b": b.mode, **comp.summary}
    _write_json(out / "compare_summary.json", summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_ik(args, cfg):
    pose = PlatformPose.from_vector(_floats(args.pose, 6, "--pose"))
    angles = stewart_ik(cfg.geometry, pose)
    print(" ".join(f"{a:.9f}" for a in angles.alpha))
    if args.out:
        _write_json(_out_dir(args) / "ik.json", {"pose": list(pose.as_vector()), "alpha_rad": list(angles.alpha)})


def cmd_fk(args, cfg):
    angles = _floats(args.angles, 6, "--angles")
    guess = PlatformPose.from_vector(_floats(args.guess, 6, "--guess")) if args.guess else None
    pose = forward_kinematics(cfg.geometry, angles, guess)
    print(" ".join(f"{v:.9f}" for v in pose.as_vector()))
    if args.out:
        _write_json(_out_dir(args) / "fk.json", {"alpha_rad": angles, "pose": list(pose.as_vector())})


def cmd_calibrate(args, cfg):
    def load(path):
        wl, labels, values = read_spectra_csv(path)
        return wl, labels, [Spectrum(v, wl) for v in values]

    wl, labels, raws = load(args.raw)
    _, _, whites = load(args.white)
    _, _, darks = load(args.dark)
    cal = CalibrationPair(median_stack(whites), median_stack(darks))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = [calibrate_spectrum(r, cal) for r in raws]
    for w in caught[:1]:
        log.warning("%s", w.message)
    d = _out_dir(args)
    write_spectra_csv(d / "calibrated.csv", wl, labels, np.array([s.values for s in out]))
    invalid = [int(i) for i in np.flatnonzero(~np.logical_and.reduce([s.valid for s in out]))] if out else []
    _write_json(d / "calibration_report.json", {"samples": len(out), "invalid_bins": invalid})
    print(f"calibrated {len(out)} spectra, {len(invalid)} invalid bins")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output directory")
    common.add_argument("--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="specscan", description=__doc__, parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scene", parents=[common], help="generate a synthetic scene")
    s.add_argument("--kind", choices=["plane", "checkerboard", "sphere", "mesh"], required=True)
    s.add_argument("--params", help="JSON object of geometry parameters")
    s.add_argument("--density", type=float, default=1e5)
    s.add_argument("--sampling", choices=["random", "grid"], default="random")
    s.set_defaults(func=cmd_scene)

    s = sub.add_parser("preprocess", parents=[common], help="crop, remove the table plane, keep the largest cluster")
    s.add_argument("input")
    s.add_argument("--skip-crop", action="store_true")
    s.add_argument("--skip-plane", action="store_true")
    s.add_argument("--skip-cluster", action="store_true")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("plan", parents=[common], help="plan viewpoints over a cleaned cloud")
    s.add_argument("cloud")
    s.add_argument("--voxel-size", type=float)
    s.add_argument("--scan-dist", type=float)
    s.add_argument("--arm-offset", type=float, nargs=3)
    s.add_argument("--order", choices=["tour", "cloud"])
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("scan", parents=[common], help="execute a plan against a synthetic scene")
    s.add_argument("--scene", required=True, help="scene.json")
    s.add_argument("--plan", required=True, help="plan.jsonl")
    s.add_argument("--mode", choices=list(MODES) + ["ground_truth"], default="prospect")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("compare", parents=[common], help="per-point SAM between two scan results")
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("ik", parents=[common], help="servo angles for a platform pose")
    s.add_argument("--pose", required=True, help='"x y z psi theta phi" (m, rad)')
    s.set_defaults(func=cmd_ik)

    s = sub.add_parser("fk", parents=[common], help="platform pose for six servo angles")
    s.add_argument("--angles", required=True, help="six servo angles (rad)")
    s.add_argument("--guess", help='initial pose "x y z psi theta phi"')
    s.set_defaults(func=cmd_fk)

    s = sub.add_parser("calibrate", parents=[common], help="white/dark reference calibration")
    s.add_argument("--raw", required=True)
    s.add_argument("--white", required=True)
    s.add_argument("--dark", required=True)
    s.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        args.func(args, cfg)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print("error: invalid configuration:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: cannot read {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    except (Unreachable, NoConvergence, NoCluster, TooFewPoints, DegenerateNeighborhood, ZeroNorm, EmptyCloud) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PlanSceneMismatch, NoOverlap, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
