"""Command-line driver. One subcommand per operation group; long-form flags
only. Exit codes: 0 success, 2 input validation, 3 numerical failure (NaN),
4 IO failure. Every subcommand is a pure function of its file inputs and
flags, and numeric flags are echoed into the output metadata."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import fixtures, losses, metrics, pipeline, postprocess, temporal
from .geometry import (CameraRig, FrustumSpec, RigidTransform, VoxelGridSpec,
                       relative_ego_motion)
from .gt_multiscale import build_pyramid
from .lift_splat import build_pooling_index, lift_and_pool, normalize_depth_logits
from .pipeline import NumericalError, PipelineConfig, PipelineStageError
from .tensorio import TensorIOError, read_tensor, write_tensor

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _add_depth_flags(p):
    p.add_argument("--depth-min", type=float, default=1.0)
    p.add_argument("--depth-max", type=float, default=13.0)
    p.add_argument("--depth-step", type=float, default=1.0)


def _frustum(args, h, w, stride):
    return FrustumSpec(feat_width=w, feat_height=h, stride=stride,
                       depth_min=args.depth_min, depth_max=args.depth_max,
                       depth_step=args.depth_step)


def _write_meta(path, args, skip=("func",)):
    meta = {k: v for k, v in vars(args).items()
            if k not in skip and not callable(v)}
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)


def cmd_synth(args):
    scene = fixtures.make_scene(
        num_cameras=args.cameras, num_frames=args.frames,
        num_boxes=args.boxes, seed=args.seed,
        image_width=args.image_width, image_height=args.image_height)
    cfg = PipelineConfig(depth_min=args.depth_min, depth_max=args.depth_max,
                         depth_step=args.depth_step)
    pipeline.emit_inputs(args.out, scene, cfg, channels=args.channels,
                         seed=args.seed)
    _write_meta(os.path.join(args.out, "synth_metadata.json"), args)
    return EXIT_OK


def cmd_cost_volume(args):
    cur = read_tensor(args.current).astype(np.float64)
    prev = read_tensor(args.previous).astype(np.float64)
    with open(args.rig) as fh:
        rig = CameraRig.from_json(fh.read())
    with open(args.pose_current) as fh:
        pose_cur = RigidTransform.from_dict(json.load(fh))
    with open(args.pose_previous) as fh:
        pose_prev = RigidTransform.from_dict(json.load(fh))
    k, cam_to_ego = rig.cameras[args.camera]
    rel = relative_ego_motion(pose_prev, pose_cur)
    f = _frustum(args, cur.shape[1], cur.shape[2], args.stride)
    cv = temporal.build_cost_volume(cur, prev, rel, k.scaled(args.stride), f,
                                    cam_to_ego=cam_to_ego)
    if np.isnan(cv).any():
        raise NumericalError("NaN in cost volume")
    write_tensor(args.out, cv.astype(np.float32))
    _write_meta(args.out + ".meta.json", args)
    return EXIT_OK


def cmd_lift(args):
    feats = read_tensor(args.features)
    logits = read_tensor(args.depth_logits)
    with open(args.rig) as fh:
        rig = CameraRig.from_json(fh.read())
    with open(args.grid) as fh:
        grid = VoxelGridSpec.from_json(fh.read())
    f = _frustum(args, feats.shape[2], feats.shape[3], args.stride)
    scaled = CameraRig(tuple((k.scaled(args.stride), t) for k, t in rig.cameras))
    idx = build_pooling_index(scaled, f, grid)
    depths = np.stack([normalize_depth_logits(logits[c])
                       for c in range(logits.shape[0])])
    out = lift_and_pool(feats.astype(np.float64), depths, idx)
    if np.isnan(out).any():
        raise NumericalError("NaN in lifted grid")
    write_tensor(args.out, out.astype(np.float32))
    _write_meta(args.out + ".meta.json", args)
    return EXIT_OK


def cmd_warp(args):
    grid_arr = read_tensor(args.input)
    with open(args.grid) as fh:
        grid = VoxelGridSpec.from_json(fh.read())
    with open(args.transform) as fh:
        rel = RigidTransform.from_dict(json.load(fh))
    out = temporal.warp_voxel_grid(grid_arr, rel, grid, mode=args.mode)
    write_tensor(args.out, out)
    _write_meta(args.out + ".meta.json", args)
    return EXIT_OK


def cmd_gt_downsample(args):
    occ = read_tensor(args.occ)
    sem = read_tensor(args.sem)
    mask = read_tensor(args.mask).astype(bool)
    pyr = build_pyramid(occ, sem, mask, levels=args.levels,
                        num_classes=args.num_classes)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.levels):
        write_tensor(os.path.join(args.out, f"occ_scale{i}.msoc"),
                     pyr.occ[i].astype(np.uint8))
        write_tensor(os.path.join(args.out, f"sem_scale{i}.msoc"),
                     pyr.sem[i].astype(np.uint8))
        write_tensor(os.path.join(args.out, f"mask_scale{i}.msoc"),
                     pyr.mask[i].astype(np.uint8))
    _write_meta(os.path.join(args.out, "metadata.json"), args)
    return EXIT_OK


def cmd_loss(args):
    occ_logits = read_tensor(args.occ_logits).astype(np.float64)
    sem_logits = read_tensor(args.sem_logits).astype(np.float64)
    gt_occ = read_tensor(args.gt_occ)
    gt_sem = read_tensor(args.gt_sem)
    mask = read_tensor(args.mask).astype(bool)
    k = sem_logits.shape[0]
    if args.weight_mode == "inverse_frequency":
        w = losses.class_frequency_weights(gt_sem, gt_occ, mask, k)
    else:
        w = losses.ClassWeights.uniform(k)
    lo, _ = losses.bce_occ_loss(occ_logits, gt_occ, mask, w)
    ls, _ = losses.focal_sem_loss(sem_logits, gt_sem, gt_occ, mask, w,
                                  args.gamma)
    ld = 0.0
    if args.depth_logits and args.gt_depth:
        dlogits = read_tensor(args.depth_logits).astype(np.float64)
        gt_depth = read_tensor(args.gt_depth)
        f = _frustum(args, dlogits.shape[1], dlogits.shape[2], 1)
        valid = (np.isfinite(gt_depth) & (gt_depth >= args.depth_min)
                 & (gt_depth < args.depth_max))
        ld, _ = losses.depth_loss(dlogits,
                                  np.where(valid, gt_depth, args.depth_min),
                                  valid, f)
    report = {"occ": lo, "sem": ls, "depth": ld, "total": lo + ls + ld,
              "gamma": args.gamma, "weight_mode": args.weight_mode}
    if np.isnan(list(report.values())[:4]).any():
        raise NumericalError("NaN in loss report")
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_tta_enumerate(args):
    tags = [{"img_hflip": t.img_hflip, "vox_flip_x": t.vox_flip_x,
             "vox_flip_y": t.vox_flip_y} for t in postprocess.enumerate_tta()]
    text = json.dumps(tags, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return EXIT_OK


def cmd_deaug(args):
    tag = postprocess.AugmentationTag(args.img_hflip, args.vox_flip_x,
                                      args.vox_flip_y)
    occ = read_tensor(args.occ)
    sem = read_tensor(args.sem)
    occ_d, sem_d = postprocess.deaugment(tag, occ, sem)
    write_tensor(args.out_occ, occ_d)
    write_tensor(args.out_sem, sem_d)
    return EXIT_OK


def cmd_ensemble(args):
    with open(os.path.join(args.preds, "tags.json")) as fh:
        tags = json.load(fh)
    sets = {}
    for model in ("a", "b"):
        entries = []
        for j, td in enumerate(tags[f"model_{model}"]):
            tag = postprocess.AugmentationTag(**td)
            occ = read_tensor(os.path.join(
                args.preds, f"model_{model}_entry{j}_occ.msoc"))
            sem = read_tensor(os.path.join(
                args.preds, f"model_{model}_entry{j}_sem.msoc"))
            entries.append(postprocess.deaugment(tag, occ, sem))
        sets[model] = entries
    cfg = postprocess.EnsembleConfig(args.weight_a, args.weight_b)
    occ_prob, sem_label = postprocess.ensemble(sets["a"], sets["b"], cfg)
    if np.isnan(occ_prob).any():
        raise NumericalError("NaN in ensembled occupancy")
    write_tensor(args.out_occ, occ_prob.astype(np.float32))
    write_tensor(args.out_sem, sem_label)
    _write_meta(args.out_occ + ".meta.json", args)
    return EXIT_OK


def cmd_threshold(args):
    occ_prob = read_tensor(args.occ_prob)
    sem_label = read_tensor(args.sem_labels)
    if args.table:
        table = postprocess.load_threshold_table(args.table)
    else:
        table = postprocess.DEFAULT_THRESHOLDS
    out = postprocess.apply_thresholds(occ_prob, sem_label, table)
    write_tensor(args.out, out)
    return EXIT_OK


def cmd_eval(args):
    pred = read_tensor(args.pred)
    gt = read_tensor(args.gt)
    mask = read_tensor(args.mask).astype(bool)
    tally = metrics.ConfusionTally(args.num_classes)
    metrics.accumulate(pred, gt, mask, tally)
    per_class, mean = metrics.miou(tally, include_free=args.include_free)
    report = {"per_class_iou": {str(k): v for k, v in per_class.items()},
              "miou": mean, "voxels_evaluated": tally.voxels_evaluated}
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_run(args):
    pipeline.run_pipeline(args.input, args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msocc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="emit a synthetic scene input directory")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=9)
    s.add_argument("--boxes", type=int, default=8)
    s.add_argument("--cameras", type=int, default=6)
    s.add_argument("--channels", type=int, default=8)
    s.add_argument("--image-width", type=int, default=128)
    s.add_argument("--image-height", type=int, default=96)
    _add_depth_flags(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("cost-volume", help="plane-sweep cost volume")
    s.add_argument("--current", required=True)
    s.add_argument("--previous", required=True)
    s.add_argument("--rig", required=True)
    s.add_argument("--camera", type=int, default=0)
    s.add_argument("--pose-current", required=True)
    s.add_argument("--pose-previous", required=True)
    s.add_argument("--stride", type=int, default=4)
    s.add_argument("--out", required=True)
    _add_depth_flags(s)
    s.set_defaults(func=cmd_cost_volume)

    s = sub.add_parser("lift", help="lift features into a voxel grid")
    s.add_argument("--features", required=True)
    s.add_argument("--depth-logits", required=True)
    s.add_argument("--rig", required=True)
    s.add_argument("--grid", required=True)
    s.add_argument("--stride", type=int, default=8)
    s.add_argument("--out", required=True)
    _add_depth_flags(s)
    s.set_defaults(func=cmd_lift)

    s = sub.add_parser("warp", help="ego-motion warp of a voxel grid")
    s.add_argument("--input", required=True)
    s.add_argument("--grid", required=True)
    s.add_argument("--transform", required=True)
    s.add_argument("--mode", choices=("nearest", "trilinear"),
                   default="trilinear")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_warp)

    s = sub.add_parser("gt-downsample", help="build the ground-truth pyramid")
    s.add_argument("--occ", required=True)
    s.add_argument("--sem", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--num-classes", type=int, default=17)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gt_downsample)

    s = sub.add_parser("loss", help="loss report for one scale")
    s.add_argument("--occ-logits", required=True)
    s.add_argument("--sem-logits", required=True)
    s.add_argument("--gt-occ", required=True)
    s.add_argument("--gt-sem", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--depth-logits")
    s.add_argument("--gt-depth")
    s.add_argument("--gamma", type=float, default=2.0)
    s.add_argument("--weight-mode", choices=("inverse_frequency", "uniform"),
                   default="inverse_frequency")
    s.add_argument("--out", required=True)
    _add_depth_flags(s)
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("tta-enumerate", help="list the 8 TTA tags")
    s.add_argument("--out")
    s.set_defaults(func=cmd_tta_enumerate)

    s = sub.add_parser("deaug", help="undo voxel flips of one entry")
    s.add_argument("--occ", required=True)
    s.add_argument("--sem", required=True)
    s.add_argument("--img-hflip", action="store_true")
    s.add_argument("--vox-flip-x", action="store_true")
    s.add_argument("--vox-flip-y", action="store_true")
    s.add_argument("--out-occ", required=True)
    s.add_argument("--out-sem", required=True)
    s.set_defaults(func=cmd_deaug)

    s = sub.add_parser("ensemble", help="fuse two models' prediction sets")
    s.add_argument("--preds", required=True,
                   help="directory with tags.json and entry tensors")
    s.add_argument("--weight-a", type=float, default=0.45)
    s.add_argument("--weight-b", type=float, default=0.55)
    s.add_argument("--out-occ", required=True)
    s.add_argument("--out-sem", required=True)
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("threshold", help="class-wise occupancy thresholding")
    s.add_argument("--occ-prob", required=True)
    s.add_argument("--sem-labels", required=True)
    s.add_argument("--table", help="JSON class-name -> threshold; defaults "
                                   "to the shipped table")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_threshold)

    s = sub.add_parser("eval", help="masked per-class IoU / mIoU")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--num-classes", type=int, default=17)
    s.add_argument("--include-free", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("run", help="full pipeline over an input directory")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PipelineStageError as e:
        print(f"error: {e}", file=sys.stderr)
        if isinstance(e.cause, TensorIOError) or isinstance(e.cause, OSError):
            return EXIT_IO
        return EXIT_VALIDATION
    except TensorIOError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, json.JSONDecodeError, AssertionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
