"""Command-line surface: geometry one-liners, synthetic experiments,
metric evaluation, bank simulation, and gradient checking.

Every subcommand accepts --seed and --out; outputs are deterministic for
a fixed seed.  Set ROADLIFT_THREADS to evaluate frames in parallel (the
merge order is fixed, so results do not depend on the worker count).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .camera_geometry import (
    GeometryError,
    depth_to_ground,
    ground_plane_from_extrinsics,
    height_sensitivity,
    lift_to_ground,
    project_to_image,
)
from .evaluation import (
    DEFAULT_DISTANCE_BINS,
    distance_error,
    detection_ratio_curve,
    frame_detection_stats,
    match,
    pr_curve_from_stats,
)
from .formats import (
    FormatError,
    parse_calibration_doc,
    parse_labels,
    serialize_calibration,
    serialize_labels,
)
from .loss_functions import (
    VECTOR_PARAM_NAMES,
    finite_difference_gradient,
    loss_gradient,
    random_smooth_case,
)
from .position_embedding import embed_depth_map
from .scene_cue_bank import FeatureGrid, SceneBank, extract_cues, make_mask, save_bank
from .scene_scheduler import SceneScheduler, SchedulerConfig, apply_augmentation
from .synthetic_world import (
    NoiseModel,
    SceneConfig,
    SyntheticScene,
    generate_scene,
    render_cue_grid,
    resample_objects,
    simulate_predictions,
)

GRADCHECK_TOLERANCE = 1e-4


def _fmt(value: float) -> str:
    return f"{value:.10g}"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_calibration(path: str):
    doc = parse_calibration_doc(Path(path).read_text())
    return doc.rig, doc.scene_id


def _worker_count() -> int:
    raw = os.environ.get("ROADLIFT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"ROADLIFT_THREADS must be an integer, got {raw!r}")


def cmd_plane(args) -> int:
    rig, _ = _read_calibration(args.calib)
    plane = ground_plane_from_extrinsics(rig)
    text = (
        f"{_fmt(plane.a)} {_fmt(plane.b)} {_fmt(plane.c)} {_fmt(plane.d)}\n"
        f"height {_fmt(plane.camera_height)}\n"
    )
    _emit(text, args.out)
    return 0


def cmd_lift(args) -> int:
    rig, _ = _read_calibration(args.calib)
    plane = ground_plane_from_extrinsics(rig)
    point = lift_to_ground(rig, plane, args.u, args.v, args.hr)
    _emit(" ".join(_fmt(v) for v in point) + "\n", args.out)
    return 0


def cmd_sensitivity(args) -> int:
    if args.sweep:
        lines = ["range_m,error_m"]
        r = 10.0
        while r <= args.range + 1e-9:
            lines.append(f"{_fmt(r)},{_fmt(height_sensitivity(args.height, args.hr, r, args.dh))}")
            r += 10.0
        _emit("\n".join(lines) + "\n", args.out)
    else:
        _emit(_fmt(height_sensitivity(args.height, args.hr, args.range, args.dh)) + "\n", args.out)
    return 0


def cmd_simulate(args) -> int:
    if not args.out:
        raise ValueError("simulate requires --out (output directory)")
    config = json.loads(Path(args.config).read_text())
    scene_cfg = SceneConfig.from_mapping(config.get("scene", {}))
    noise = NoiseModel.from_mapping(config.get("noise", {}))
    n_frames = int(config.get("frames", 1))
    if n_frames < 1:
        raise ValueError("frames must be at least 1")
    scene = generate_scene(scene_cfg, args.seed)
    out = Path(args.out)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    (out / "pred").mkdir(parents=True, exist_ok=True)
    (out / "calib.json").write_text(serialize_calibration(scene.rig, scene.scene_id))
    for k in range(n_frames):
        frame_scene = scene if k == 0 else resample_objects(scene, scene_cfg, k)
        record = simulate_predictions(frame_scene, noise, seed=k, timestamp=float(k))
        (out / "gt" / f"frame_{k:04d}.txt").write_text(serialize_labels(record.gt_boxes))
        (out / "pred" / f"frame_{k:04d}.txt").write_text(serialize_labels(record.pred_boxes))
    print(f"wrote {n_frames} frame(s) for {scene.scene_id} to {out}")
    return 0


def _load_frames(path: str) -> list[list]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.txt"))
        if not files:
            raise ValueError(f"no .txt label files under {p}")
        return [parse_labels(f.read_text()) for f in files]
    return [parse_labels(p.read_text())]


def cmd_evaluate(args) -> int:
    gts = _load_frames(args.gt)
    preds = _load_frames(args.pred)
    if len(gts) != len(preds):
        raise ValueError(f"frame count mismatch: {len(gts)} GT vs {len(preds)} prediction files")
    classes = sorted({b.category for frame in gts for b in frame})
    workers = _worker_count()

    def stats_for(gt_filter, pred_class):
        frames = [
            (g, [b for b in p if pred_class is None or b.category == pred_class])
            for g, p in zip(gts, preds)
        ]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                stats = list(
                    pool.map(
                        lambda fr: frame_detection_stats(
                            fr[0], fr[1], args.iou, args.kind, gt_filter
                        ),
                        frames,
                    )
                )
        else:
            stats = [
                frame_detection_stats(g, p, args.iou, args.kind, gt_filter) for g, p in frames
            ]
        return pr_curve_from_stats(stats)

    rows = ["metric,class,threshold,value"]
    metric = f"ap_{args.kind}"
    curve = stats_for(None, None)
    rows.append(f"{metric},all,{_fmt(args.iou)},{_fmt(curve.ap)}")
    for cls in classes:
        curve = stats_for(lambda b, c=cls: b.category == c, cls)
        rows.append(f"{metric},{cls},{_fmt(args.iou)},{_fmt(curve.ap)}")
    if args.ratio_thresholds:
        thresholds = [float(t) for t in args.ratio_thresholds.split(",")]
        ratios = detection_ratio_curve(gts, preds, thresholds)
        for t, ratio in zip(thresholds, ratios):
            rows.append(f"detection_ratio,all,{_fmt(t)},{_fmt(ratio)}")
    _emit("\n".join(rows) + "\n", args.out)
    if args.distance_csv:
        matches = [match(g, p, args.iou, args.kind) for g, p in zip(gts, preds)]
        table = distance_error(matches, DEFAULT_DISTANCE_BINS)
        lines = ["bin_lo_m,bin_hi_m,mean_error_pct,matched"]
        for b in table.bins:
            value = "-" if b.mean_error_pct is None else _fmt(b.mean_error_pct)
            lines.append(f"{_fmt(b.lo)},{_fmt(b.hi)},{value},{b.count}")
        Path(args.distance_csv).write_text("\n".join(lines) + "\n")
    return 0


def cmd_bank_sim(args) -> int:
    config = json.loads(Path(args.config).read_text())
    scene_cfg = SceneConfig.from_mapping(config.get("scene", {}))
    n_frames = int(config.get("frames", 60))
    momentum = float(config.get("momentum", 0.1))
    channels = int(config.get("channels", 4))
    sigma = float(config.get("cue_noise_sigma", 0.05))
    sched_block = dict(config.get("scheduler", {}))
    sched_block.setdefault("tau", int(config.get("tau", 20)))
    sched_block.setdefault("seed", args.seed)
    unknown = set(sched_block) - set(SchedulerConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown scheduler config keys: {sorted(unknown)}")
    scene = generate_scene(scene_cfg, args.seed)
    sid = scene.scene_id
    scheduler = SceneScheduler(SchedulerConfig(**sched_block))
    bank_train = SceneBank()
    bank_infer = SceneBank()
    true_plain = render_cue_grid(scene, channels)
    rows = ["phase,frame,did_reset,cells,mean_abs_err,mean_sq_err"]
    aug_scene: SyntheticScene | None = None
    true_aug: FeatureGrid | None = None
    resets = 0

    def _observe(truth: FeatureGrid, rng) -> FeatureGrid:
        return FeatureGrid(truth.values + sigma * rng.standard_normal(truth.values.shape))

    def _mask_for(target_scene: SyntheticScene, frame_scene: SyntheticScene):
        points = []
        for box in frame_scene.objects:
            try:
                points.append(project_to_image(target_scene.rig, box.bottom_center))
            except GeometryError:
                continue
        dims = (target_scene.rig.image_height // 8, target_scene.rig.image_width // 8)
        return make_mask(points, dims)

    for t in range(n_frames):
        frame_scene = scene if t == 0 else resample_objects(scene, scene_cfg, t)
        params, did_reset = scheduler.step(sid)
        if aug_scene is None or did_reset:
            aug_rig = apply_augmentation(scene.rig, params)
            aug_scene = SyntheticScene(
                rig=aug_rig,
                plane=ground_plane_from_extrinsics(aug_rig),
                field=scene.field,
                objects=scene.objects,
                scene_id=sid,
                seed=scene.seed,
            )
            true_aug = render_cue_grid(aug_scene, channels)
            resets += int(did_reset)
        mask = _mask_for(aug_scene, frame_scene)
        cues = extract_cues(_observe(true_aug, np.random.default_rng([args.seed, 5, t])), mask)
        if did_reset:
            bank_train.reset_scene(sid, cues)
        else:
            bank_train.update_momentum(sid, cues, momentum)
        sel = mask.cells.astype(bool)
        if sel.any():
            err = bank_train.memorized(sid).values[sel, 0] - true_aug.values[sel, 0]
            rows.append(
                f"train,{t},{int(did_reset)},{int(sel.sum())},"
                f"{_fmt(float(np.abs(err).mean()))},{_fmt(float((err ** 2).mean()))}"
            )
        mask_plain = _mask_for(scene, frame_scene)
        cues_plain = extract_cues(
            _observe(true_plain, np.random.default_rng([args.seed, 6, t])), mask_plain
        )
        bank_infer.update_running_average(sid, cues_plain, mask_plain)
        seen = bank_infer.counter(sid) > 0
        if seen.any():
            err = bank_infer.memorized(sid).values[seen, 0] - true_plain.values[seen, 0]
            rows.append(
                f"infer,{t},0,{int(seen.sum())},"
                f"{_fmt(float(np.abs(err).mean()))},{_fmt(float((err ** 2).mean()))}"
            )
    _emit("\n".join(rows) + "\n", args.out)
    if args.bank_out:
        save_bank(bank_infer, args.bank_out)
    print(f"bank-sim: {n_frames} frames, {resets} augmentation reset(s)", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    pred, gt, pred_hr = random_smooth_case(rng)
    analytic = loss_gradient(pred, gt, pred_hr=pred_hr)
    numeric = finite_difference_gradient(pred, gt, pred_hr=pred_hr)
    rows = ["parameter,analytic,finite_difference,rel_error"]
    worst = 0.0
    for name, a, f in zip(VECTOR_PARAM_NAMES, analytic, numeric):
        rel = abs(a - f) / max(abs(a), abs(f), 1.0)
        worst = max(worst, rel)
        rows.append(f"{name},{_fmt(a)},{_fmt(f)},{rel:.3e}")
    _emit("\n".join(rows) + "\n", args.out)
    return 0 if worst < GRADCHECK_TOLERANCE else 1


def cmd_embed(args) -> int:
    rig, _ = _read_calibration(args.calib)
    plane = ground_plane_from_extrinsics(rig)
    grid = embed_depth_map(rig, plane, args.de)
    rows = ["row,col,depth_m,sin0,cos0"]
    for r in range(grid.shape[0]):
        for c in range(grid.shape[1]):
            u, v = (c + 0.5) * 8, (r + 0.5) * 8
            try:
                depth = _fmt(depth_to_ground(rig, plane, u, v))
            except GeometryError:
                depth = "-"
            rows.append(f"{r},{c},{depth},{_fmt(grid[r, c, 0])},{_fmt(grid[r, c, 1])}")
    _emit("\n".join(rows) + "\n", args.out)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roadlift",
        description="Roadside monocular 3D detection geometry and metrics toolkit",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", default=None, help="write primary output to this path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plane", parents=[common], help="print the virtual ground plane")
    p.add_argument("--calib", required=True, help="calibration JSON file")
    p.set_defaults(func=cmd_plane)

    p = sub.add_parser("lift", parents=[common], help="lift a pixel + relative height to 3D")
    p.add_argument("--calib", required=True)
    p.add_argument("--u", type=float, required=True, help="pixel u coordinate")
    p.add_argument("--v", type=float, required=True, help="pixel v coordinate")
    p.add_argument("--hr", type=float, required=True, help="relative height in meters")
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser(
        "sensitivity", parents=[common], help="location error caused by a relative-height error"
    )
    p.add_argument("--height", type=float, required=True, help="camera height in meters")
    p.add_argument("--range", type=float, required=True, help="object range in meters")
    p.add_argument("--dh", type=float, required=True, help="height error in meters")
    p.add_argument("--hr", type=float, default=0.0, help="base relative height (default 0)")
    p.add_argument("--sweep", action="store_true", help="emit a range,error CSV in 10 m steps")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("simulate", parents=[common], help="generate a scene + noisy predictions")
    p.add_argument("--config", required=True, help="JSON: {scene: {...}, noise: {...}, frames: N}")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", parents=[common], help="AP and related metrics from label files")
    p.add_argument("--gt", required=True, help="GT label file or directory")
    p.add_argument("--pred", required=True, help="prediction label file or directory")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold (default 0.5)")
    p.add_argument("--kind", choices=("bev", "3d"), default="bev", help="IoU kind")
    p.add_argument(
        "--ratio-thresholds",
        default=None,
        help="comma-separated meters; adds detection_ratio rows",
    )
    p.add_argument("--distance-csv", default=None, help="also write a binned distance-error CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "bank-sim", parents=[common], help="simulate schedule + bank accumulation convergence"
    )
    p.add_argument(
        "--config",
        required=True,
        help="JSON: {scene: {...}, frames, tau | scheduler: {...}, momentum, "
        "channels, cue_noise_sigma}",
    )
    p.add_argument("--bank-out", default=None, help="also save the inference bank (binary)")
    p.set_defaults(func=cmd_bank_sim)

    p = sub.add_parser(
        "gradcheck", parents=[common], help="analytic vs finite-difference loss gradients"
    )
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("embed", parents=[common], help="export the depth embedding grid as CSV")
    p.add_argument("--calib", required=True)
    p.add_argument("--de", type=int, default=32, help="embedding size (even, default 32)")
    p.set_defaults(func=cmd_embed)
    return parser


def run_command(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except (GeometryError, FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
