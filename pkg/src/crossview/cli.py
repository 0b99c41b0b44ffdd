"""Command-line surface: scene generation, pose solving, evaluation, losses.

Exit codes: 0 success, 2 input error, 3 degenerate solution. All randomness
flows from explicit --seed flags; set CROSSVIEW_LOG=DEBUG|INFO|WARNING for
verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .evaluation import (DEFAULT_THRESHOLDS_PX, GroundTruthProjection,
                         MatchPrediction, localization_stats,
                         matching_success_ratio)
from .geometry import Pose3DoF, SceneSpec
from .losses import LossConfig, height_loss, loss_report, matching_loss, vce_loss
from .pipeline import PipelineConfig, run_localization
from .refiner import RefinerParams, initial_similarity
from .solver import pose_error
from .surface import (aerial_depth_to_height_index, fuse_height_features,
                      normalize_confidence, surface_from_accumulation)
from .synthetic import load_scene_dir, make_scene_bundle, save_scene_dir
from .tensorio import load_tensor

log = logging.getLogger("crossview")

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_DEGENERATE = 3


def _dump_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _write_csv_report(path: str, rows: list[tuple]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def cmd_generate(args) -> int:
    specs = SceneSpec.from_json_dict(json.loads(Path(args.spec_json).read_text())) \
        if args.spec_json else _default_specs(args.n)
    bundle = make_scene_bundle(specs, seed=args.seed, noise_sigma=args.noise,
                               channels=args.channels, snapped=not args.continuous_pose)
    save_scene_dir(args.out_dir, bundle)
    log.info("wrote scene (seed=%d, noise=%g) to %s", args.seed, args.noise, args.out_dir)
    return EXIT_OK


def _default_specs(n: int) -> SceneSpec:
    from .geometry import AerialMeta, BevGridSpec, CameraIntrinsics, HeightLayerSpec
    return SceneSpec(
        grid=BevGridSpec(n_points_per_side=n),
        layers=HeightLayerSpec(),
        intrinsics=CameraIntrinsics(1024, 512),
        aerial=AerialMeta(),
    )


def _load_solve_inputs(args):
    if args.scene_dir:
        bundle = load_scene_dir(args.scene_dir)
        return bundle.inputs.volume, bundle.inputs.conf_logits, bundle.inputs.f_sat, bundle.specs
    needed = (args.volume, args.conf_logits, args.f_sat, args.spec_json)
    if any(p is None for p in needed):
        raise ValueError("either --scene-dir or all of --volume/--conf-logits/--f-sat/--spec-json")
    from .surface import BevFeatureMap, FeatureVolume
    specs = SceneSpec.from_json_dict(json.loads(Path(args.spec_json).read_text()))
    volume = FeatureVolume(load_tensor(args.volume).astype(float), specs.layers, specs.grid)
    conf_logits = load_tensor(args.conf_logits).astype(float)
    f_sat = BevFeatureMap(load_tensor(args.f_sat).astype(float), specs.grid)
    return volume, conf_logits, f_sat, specs


def cmd_solve(args) -> int:
    volume, conf_logits, f_sat, specs = _load_solve_inputs(args)
    params = RefinerParams.load(args.refiner_params) if args.refiner_params else None
    config = PipelineConfig(
        surface_threshold=args.threshold,
        top_k=args.topk,
        known_yaw_rad=math.radians(args.known_yaw) if args.known_yaw is not None else None,
    )
    result = run_localization(volume, conf_logits, f_sat, specs, params, config)
    payload = {
        "tx_px": float(result.pose_px.t_px[0]),
        "ty_px": float(result.pose_px.t_px[1]),
        "yaw_deg": result.pose_px.yaw_deg,
        "num_matches": result.num_matches,
        "degenerate_flag": result.degenerate,
    }
    _dump_json(payload, args.out)
    return EXIT_DEGENERATE if result.degenerate else EXIT_OK


def cmd_eval(args) -> int:
    if args.mode == "matching":
        pred = MatchPrediction.from_csv(args.pred_csv)
        gt = GroundTruthProjection.load(args.gt_dir)
        thresholds = [float(t) for t in args.thresholds.split(",")] if args.thresholds \
            else list(DEFAULT_THRESHOLDS_PX)
        report = matching_success_ratio(pred, gt, thresholds)
        report["mode"] = "matching"
        rows = [("threshold_px", "ratio")]
        rows += list(zip(report["thresholds_px"], report["ratios"]))
        rows += [("valid_ratio", report["valid_ratio"])]
    else:
        pred_poses = _read_pose_csv(args.pred_csv)
        gt_dir = Path(args.gt_dir)
        gt_poses = _read_pose_csv(gt_dir / "poses.csv")
        if len(pred_poses) != len(gt_poses):
            raise ValueError(
                f"prediction count {len(pred_poses)} != ground-truth count {len(gt_poses)}")
        specs = SceneSpec.from_json_dict(json.loads((gt_dir / "spec.json").read_text()))
        errors = [pose_error(p, g, specs.aerial) for p, g in zip(pred_poses, gt_poses)]
        report = localization_stats(errors)
        report["mode"] = "localization"
        rows = [("metric", "value")] + sorted(
            (k, v) for k, v in report.items() if k != "mode")
    _dump_json(report, args.out)
    if args.out_csv:
        _write_csv_report(args.out_csv, rows)
    return EXIT_OK


def _read_pose_csv(path) -> list[Pose3DoF]:
    import csv
    poses = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ("tx_px", "ty_px", "yaw_deg")
        if reader.fieldnames is None or tuple(reader.fieldnames) != expected:
            raise ValueError(f"{path}: expected header {','.join(expected)}")
        for line_no, row in enumerate(reader, start=2):
            try:
                poses.append(Pose3DoF(
                    np.array([float(row["tx_px"]), float(row["ty_px"])]),
                    math.radians(float(row["yaw_deg"]))))
            except (TypeError, ValueError, KeyError) as exc:
                raise ValueError(f"{path}: malformed row at line {line_no}") from exc
    if not poses:
        raise ValueError(f"{path}: no pose rows")
    return poses


def cmd_loss(args) -> int:
    bundle = load_scene_dir(args.scene_dir)
    specs = bundle.specs
    cfg = LossConfig.from_json_dict(json.loads(Path(args.config).read_text())) \
        if args.config else LossConfig()
    pred_raw = json.loads(Path(args.pred_pose).read_text())
    pred = Pose3DoF.from_json_dict(pred_raw)
    gt = bundle.scene.gt_pose

    conf = normalize_confidence(bundle.inputs.conf_logits)
    surf_grd = surface_from_accumulation(conf, args.threshold, specs.layers)
    f_grd = fuse_height_features(bundle.inputs.volume, conf, surf_grd)
    sim = initial_similarity(f_grd, bundle.inputs.f_sat, args.tau)
    surf_sat = aerial_depth_to_height_index(
        bundle.inputs.depth_sat, specs.layers,
        ground_anchor_m=bundle.depth_anchor_m, scale=bundle.depth_scale)

    gsd = specs.aerial.gsd_m_per_px
    pred_m = Pose3DoF(pred.t_px * gsd, pred.yaw_rad)
    gt_m = Pose3DoF(gt.t_px * gsd, gt.yaw_rad)

    vce = vce_loss(pred_m, gt_m, cfg)
    matching = matching_loss(sim, gt, specs, cfg)
    height = height_loss(surf_grd, surf_sat, gt, specs, cfg)
    _dump_json(loss_report(vce, matching, height, cfg), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossview",
        description="Ground-to-aerial localization pipeline over BEV feature grids.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic scene directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, default=41, help="grid points per side (odd)")
    p.add_argument("--noise", type=float, default=0.0, help="feature noise sigma")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--continuous-pose", action="store_true",
                   help="draw a continuous pose instead of a grid-snapped one")
    p.add_argument("--spec-json", help="scene spec JSON (overrides --n)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="recover the pose from scene tensors")
    p.add_argument("--scene-dir")
    p.add_argument("--volume")
    p.add_argument("--conf-logits")
    p.add_argument("--f-sat")
    p.add_argument("--spec-json")
    p.add_argument("--refiner-params", help="directory of refiner parameter tensors")
    p.add_argument("--threshold", type=float, default=0.5, help="surface threshold")
    p.add_argument("--topk", type=int, default=30)
    p.add_argument("--known-yaw", type=float, default=None,
                   help="fix the yaw (degrees) and solve translation only")
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred-csv", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--mode", choices=("localization", "matching"), required=True)
    p.add_argument("--thresholds", help="comma-separated pixel thresholds (matching mode)")
    p.add_argument("--out")
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loss", help="evaluate the training losses on a scene")
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--pred-pose", required=True, help="pose JSON (as emitted by solve)")
    p.add_argument("--config", help="loss config JSON")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_loss)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CROSSVIEW_LOG", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
