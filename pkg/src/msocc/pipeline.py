"""Pipeline driver: wires cost volumes, lifting, temporal stacking, the loss
stack, and the post-process / evaluation route over a directory of tensors.

Input directory layout (as emitted by `msocc synth`):

    rig.json, grid.json, poses.json, config.json
    gt_occ.msoc, gt_sem.msoc, mask.msoc          uint8 / uint8 / uint8
    gt_depth.msoc                                 f64 (N, H, W), inf = no hit
    features/frame{t:02d}_stride{s}.msoc          f32 (N, C, H, W)
    depth_logits/frame{t:02d}_stride{s}.msoc      f32 (N, D, H, W)
    heads/occ_logits_scale{i}.msoc                f64 (nx, ny, nz)
    heads/sem_logits_scale{i}.msoc                f64 (K, nx, ny, nz)
    preds/tags.json                               TTA tags per model
    preds/model_{a,b}_entry{j}_{occ,sem}.msoc     augmented probability volumes

Frames are ordered oldest to newest; the last frame is the current one.
The 3D fusion network between stacking and the heads is out of scope and
replaced by identity.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import losses, metrics, postprocess, temporal
from .geometry import CameraRig, FrustumSpec, VoxelGridSpec, relative_ego_motion, RigidTransform
from .gt_multiscale import build_pyramid
from .lift_splat import build_pooling_index, lift_and_pool, normalize_depth_logits
from .tensorio import read_tensor, write_tensor


class PipelineStageError(Exception):
    def __init__(self, stage: str, path: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed on {path}: {cause}")
        self.stage = stage
        self.path = path
        self.cause = cause


class NumericalError(Exception):
    """NaN detected in a pipeline tensor (exit code 3 at the CLI)."""


@dataclass
class PipelineConfig:
    strides: tuple = (8, 16, 32)
    cost_stride: int = 4
    depth_min: float = 1.0
    depth_max: float = 13.0
    depth_step: float = 1.0
    gamma: float = 2.0
    alphas: tuple = (1.0, 0.5, 0.25)
    weight_mode: str = "inverse_frequency"
    ensemble_weights: tuple = (0.45, 0.55)
    threshold_table: str | None = None  # path; None = built-in defaults
    num_classes: int = 17

    def to_dict(self) -> dict:
        return {
            "strides": list(self.strides),
            "cost_stride": self.cost_stride,
            "depth_min": self.depth_min,
            "depth_max": self.depth_max,
            "depth_step": self.depth_step,
            "gamma": self.gamma,
            "alphas": list(self.alphas),
            "weight_mode": self.weight_mode,
            "ensemble_weights": list(self.ensemble_weights),
            "threshold_table": self.threshold_table,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        cfg = cls()
        for k, v in d.items():
            if not hasattr(cfg, k):
                raise ValueError(f"unknown config key {k!r}")
            if isinstance(getattr(cfg, k), tuple) and v is not None:
                v = tuple(v)
            setattr(cfg, k, v)
        if cfg.weight_mode not in ("inverse_frequency", "uniform"):
            raise ValueError(f"unknown weight_mode {cfg.weight_mode!r}")
        return cfg


def _check_finite(name: str, arr: np.ndarray):
    if np.isnan(arr).any():
        raise NumericalError(f"NaN in {name}")


def _grid_level(grid: VoxelGridSpec, level: int) -> VoxelGridSpec:
    f = 2 ** level
    return VoxelGridSpec(grid.nx // f, grid.ny // f, grid.nz // f,
                         origin=grid.origin, voxel_size=grid.voxel_size * f)


def _frustum_for(cfg: PipelineConfig, stride: int, h: int, w: int) -> FrustumSpec:
    return FrustumSpec(feat_width=w, feat_height=h, stride=stride,
                       depth_min=cfg.depth_min, depth_max=cfg.depth_max,
                       depth_step=cfg.depth_step)


def _load_json(path, parser):
    with open(path) as fh:
        return parser(fh.read())


def run_pipeline(input_dir: str, output_dir: str,
                 config: PipelineConfig | None = None) -> dict:
    """Execute every stage over an input directory; returns the combined
    report (also written as JSON into output_dir)."""
    inp = input_dir
    out = output_dir
    os.makedirs(out, exist_ok=True)

    if config is None:
        cfg_path = os.path.join(inp, "config.json")
        if os.path.exists(cfg_path):
            with open(cfg_path) as fh:
                config = PipelineConfig.from_dict(json.load(fh))
        else:
            config = PipelineConfig()
    cfg = config

    rig = _load_json(os.path.join(inp, "rig.json"), CameraRig.from_json)
    grid = _load_json(os.path.join(inp, "grid.json"), VoxelGridSpec.from_json)
    with open(os.path.join(inp, "poses.json")) as fh:
        poses = [RigidTransform.from_dict(d) for d in json.load(fh)]
    num_frames = len(poses)

    def frame_path(kind, t, stride):
        return os.path.join(inp, kind, f"frame{t:02d}_stride{stride}.msoc")

    # ---- stage: cost volumes at stride 1/4 between adjacent frames ----
    cv_dir = os.path.join(out, "cost_volumes")
    os.makedirs(cv_dir, exist_ok=True)
    for t in range(1, num_frames):
        path = frame_path("features", t, cfg.cost_stride)
        try:
            feats_cur = read_tensor(path)
            feats_prev = read_tensor(frame_path("features", t - 1, cfg.cost_stride))
            rel = relative_ego_motion(poses[t - 1], poses[t])
            n, _, h, w = feats_cur.shape
            f4 = _frustum_for(cfg, cfg.cost_stride, h, w)
            for cam in range(n):
                k4 = rig.cameras[cam][0].scaled(cfg.cost_stride)
                cv = temporal.build_cost_volume(
                    feats_cur[cam].astype(np.float64),
                    feats_prev[cam].astype(np.float64),
                    rel, k4, f4, cam_to_ego=rig.cameras[cam][1])
                _check_finite(f"cost volume frame {t} cam {cam}", cv)
                write_tensor(os.path.join(
                    cv_dir, f"frame{t:02d}_cam{cam}_stride{cfg.cost_stride}.msoc"),
                    cv.astype(np.float32))
                for s in cfg.strides:
                    cv_s = temporal.rescale_cost_volume(cv, s, cfg.cost_stride)
                    write_tensor(os.path.join(
                        cv_dir, f"frame{t:02d}_cam{cam}_stride{s}.msoc"),
                        cv_s.astype(np.float32))
        except (OSError, ValueError) as e:
            raise PipelineStageError("cost_volume", path, e)

    # ---- stage: lift + temporal stack per scale (earliest frame dropped) ----
    vox_dir = os.path.join(out, "voxel")
    os.makedirs(vox_dir, exist_ok=True)
    pose_cur = poses[-1]
    for level, stride in enumerate(cfg.strides):
        g = _grid_level(grid, level)
        path = frame_path("features", 1, stride)
        try:
            sample = read_tensor(path)
            _, _, h, w = sample.shape
            f = _frustum_for(cfg, stride, h, w)
            scaled_rig = CameraRig(tuple(
                (k.scaled(stride), t) for k, t in rig.cameras))
            idx = build_pooling_index(scaled_rig, f, g)
            aligned = []
            for t in range(1, num_frames):
                feats = read_tensor(frame_path("features", t, stride))
                logits = read_tensor(frame_path("depth_logits", t, stride))
                depths = np.stack([normalize_depth_logits(logits[c])
                                   for c in range(logits.shape[0])])
                lifted = lift_and_pool(feats.astype(np.float64), depths, idx)
                _check_finite(f"lifted frame {t} stride {stride}", lifted)
                write_tensor(os.path.join(
                    vox_dir, f"frame{t:02d}_scale{level}.msoc"),
                    lifted.astype(np.float32))
                rel = relative_ego_motion(poses[t], pose_cur)
                aligned.append(temporal.warp_voxel_grid(lifted, rel, g,
                                                        mode="trilinear"))
            stack = temporal.stack_temporal(aligned)
            # identity stands in for the out-of-scope 3D fusion network
            write_tensor(os.path.join(vox_dir, f"stack_scale{level}.msoc"),
                         stack.astype(np.float32))
        except (OSError, ValueError) as e:
            raise PipelineStageError("lift_stack", path, e)

    # ---- stage: multi-scale ground truth ----
    gt_dir = os.path.join(out, "gt_pyramid")
    os.makedirs(gt_dir, exist_ok=True)
    try:
        gt_occ = read_tensor(os.path.join(inp, "gt_occ.msoc"))
        gt_sem = read_tensor(os.path.join(inp, "gt_sem.msoc"))
        mask = read_tensor(os.path.join(inp, "mask.msoc")).astype(bool)
        pyramid = build_pyramid(gt_occ, gt_sem, mask, levels=len(cfg.strides),
                                num_classes=cfg.num_classes)
        for i in range(len(cfg.strides)):
            write_tensor(os.path.join(gt_dir, f"occ_scale{i}.msoc"),
                         pyramid.occ[i].astype(np.uint8))
            write_tensor(os.path.join(gt_dir, f"sem_scale{i}.msoc"),
                         pyramid.sem[i].astype(np.uint8))
            write_tensor(os.path.join(gt_dir, f"mask_scale{i}.msoc"),
                         pyramid.mask[i].astype(np.uint8))
    except (OSError, ValueError) as e:
        raise PipelineStageError("gt_pyramid", os.path.join(inp, "gt_occ.msoc"), e)

    # ---- stage: loss report against the pyramid ----
    try:
        gt_depth = read_tensor(os.path.join(inp, "gt_depth.msoc"))
        occ_l, sem_l, dep_l = [], [], []
        for i in range(len(cfg.strides)):
            occ_logits = read_tensor(os.path.join(inp, "heads",
                                                  f"occ_logits_scale{i}.msoc"))
            sem_logits = read_tensor(os.path.join(inp, "heads",
                                                  f"sem_logits_scale{i}.msoc"))
            if cfg.weight_mode == "inverse_frequency":
                w = losses.class_frequency_weights(
                    pyramid.sem[i], pyramid.occ[i], pyramid.mask[i],
                    cfg.num_classes)
            else:
                w = losses.ClassWeights.uniform(cfg.num_classes)
            lo, _ = losses.bce_occ_loss(occ_logits, pyramid.occ[i],
                                        pyramid.mask[i], w)
            ls, _ = losses.focal_sem_loss(sem_logits, pyramid.sem[i],
                                          pyramid.occ[i], pyramid.mask[i], w,
                                          cfg.gamma)
            # depth supervision at this scale's stride, pixel-center subsampled
            stride = cfg.strides[i]
            logits = read_tensor(frame_path("depth_logits", num_frames - 1,
                                            stride))
            sub = gt_depth[:, stride // 2::stride, stride // 2::stride]
            f = _frustum_for(cfg, stride, logits.shape[2], logits.shape[3])
            valid = np.isfinite(sub) & (sub >= f.depth_min) & (sub < f.depth_max)
            dl = 0.0
            for cam in range(logits.shape[0]):
                if valid[cam].any():
                    l, _ = losses.depth_loss(logits[cam].astype(np.float64),
                                             np.where(valid[cam], sub[cam],
                                                      f.depth_min),
                                             valid[cam], f)
                    dl += l
            dl /= logits.shape[0]
            occ_l.append(lo)
            sem_l.append(ls)
            dep_l.append(dl)
        report = losses.total_loss(occ_l, sem_l, dep_l, cfg.alphas)
        with open(os.path.join(out, "loss_report.json"), "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    except (OSError, ValueError) as e:
        raise PipelineStageError("loss", os.path.join(inp, "heads"), e)

    # ---- stage: de-augment, ensemble, threshold, evaluate ----
    try:
        with open(os.path.join(inp, "preds", "tags.json")) as fh:
            tags = json.load(fh)
        sets = {}
        for model in ("a", "b"):
            entries = []
            for j, td in enumerate(tags[f"model_{model}"]):
                tag = postprocess.AugmentationTag(**td)
                occ_p = read_tensor(os.path.join(
                    inp, "preds", f"model_{model}_entry{j}_occ.msoc"))
                sem_p = read_tensor(os.path.join(
                    inp, "preds", f"model_{model}_entry{j}_sem.msoc"))
                entries.append(postprocess.deaugment(tag, occ_p, sem_p))
            sets[model] = entries
        ecfg = postprocess.EnsembleConfig(*cfg.ensemble_weights)
        occ_prob, sem_label = postprocess.ensemble(sets["a"], sets["b"], ecfg)
        _check_finite("ensembled occupancy", occ_prob)
        if cfg.threshold_table:
            table = postprocess.load_threshold_table(
                os.path.join(inp, cfg.threshold_table))
        else:
            table = postprocess.DEFAULT_THRESHOLDS
        final = postprocess.apply_thresholds(occ_prob, sem_label, table)
        write_tensor(os.path.join(out, "occ_prob.msoc"),
                     occ_prob.astype(np.float32))
        write_tensor(os.path.join(out, "final_labels.msoc"), final)

        gt_labels = np.where(gt_occ == 1, gt_sem, 255).astype(np.uint8)
        tally = metrics.ConfusionTally(cfg.num_classes)
        metrics.accumulate(final, gt_labels, mask, tally)
        per_class, mean = metrics.miou(tally)
        eval_report = {
            "per_class_iou": {str(k): v for k, v in per_class.items()},
            "miou": mean,
            "voxels_evaluated": tally.voxels_evaluated,
        }
        with open(os.path.join(out, "eval_report.json"), "w") as fh:
            json.dump(eval_report, fh, indent=2, sort_keys=True)
    except (OSError, ValueError) as e:
        raise PipelineStageError("postprocess", os.path.join(inp, "preds"), e)

    with open(os.path.join(out, "metadata.json"), "w") as fh:
        json.dump({"config": cfg.to_dict(), "num_frames": num_frames},
                  fh, indent=2, sort_keys=True)
    combined = {"loss": report.to_dict(), "eval": eval_report}
    return combined


def emit_inputs(out_dir: str, scene, config: PipelineConfig | None = None,
                channels: int = 8, seed: int = 0) -> None:
    """Write a complete pipeline input directory for a synthetic scene.

    Features are seeded pseudo-random; depth logits favor the rendered
    ground-truth depth; head logits and prediction sets are oracles built
    from the ground truth, so a full `run` evaluates to mIoU 1.0.
    """
    from . import fixtures
    from .postprocess import apply_flips, enumerate_tta

    cfg = config or PipelineConfig()
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)

    with open(os.path.join(out_dir, "rig.json"), "w") as fh:
        fh.write(scene.rig.to_json())
    with open(os.path.join(out_dir, "grid.json"), "w") as fh:
        fh.write(scene.grid.to_json())
    with open(os.path.join(out_dir, "poses.json"), "w") as fh:
        json.dump([p.to_dict() for p in scene.poses], fh, indent=2)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)

    write_tensor(os.path.join(out_dir, "gt_occ.msoc"),
                 scene.gt_occ.astype(np.uint8))
    write_tensor(os.path.join(out_dir, "gt_sem.msoc"),
                 scene.gt_sem.astype(np.uint8))
    write_tensor(os.path.join(out_dir, "mask.msoc"),
                 scene.mask.astype(np.uint8))
    write_tensor(os.path.join(out_dir, "gt_depth.msoc"),
                 scene.gt_depth.astype(np.float64))

    n_cams = len(scene.rig)
    k0 = scene.rig.cameras[0][0]
    num_frames = len(scene.poses)
    num_bins = FrustumSpec(1, 1, 1, cfg.depth_min, cfg.depth_max,
                           cfg.depth_step).num_bins
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "depth_logits"), exist_ok=True)
    for t in range(num_frames):
        for s in (cfg.cost_stride, *cfg.strides):
            h, w = k0.height // s, k0.width // s
            feats = rng.standard_normal((n_cams, channels, h, w))
            write_tensor(os.path.join(out_dir, "features",
                                      f"frame{t:02d}_stride{s}.msoc"),
                         feats.astype(np.float32))
            if s == cfg.cost_stride:
                continue
            sub = scene.gt_depth[:, s // 2::s, s // 2::s]
            logits = rng.standard_normal((n_cams, num_bins, h, w)) * 0.1
            valid = np.isfinite(sub) & (sub >= cfg.depth_min) \
                & (sub < cfg.depth_max)
            bins = np.floor((np.where(valid, sub, cfg.depth_min)
                             - cfg.depth_min) / cfg.depth_step).astype(np.int64)
            cam_i, v_i, u_i = np.nonzero(valid)
            logits[cam_i, bins[valid], v_i, u_i] += 5.0
            write_tensor(os.path.join(out_dir, "depth_logits",
                                      f"frame{t:02d}_stride{s}.msoc"),
                         logits.astype(np.float32))

    os.makedirs(os.path.join(out_dir, "heads"), exist_ok=True)
    occ_pyr, sem_pyr = scene.gt_occ, scene.gt_sem
    pyramid = build_pyramid(occ_pyr, sem_pyr, scene.mask,
                            levels=len(cfg.strides),
                            num_classes=cfg.num_classes)
    from .gt_multiscale import FREE
    for i in range(len(cfg.strides)):
        occ_logits = np.where(pyramid.occ[i] == 1, 10.0, -10.0)
        labels = np.where(pyramid.sem[i] == FREE, 0,
                          pyramid.sem[i]).astype(np.int64)
        sem_logits = (np.moveaxis(np.eye(cfg.num_classes)[labels], -1, 0)
                      * 2 - 1) * 10.0
        write_tensor(os.path.join(out_dir, "heads",
                                  f"occ_logits_scale{i}.msoc"),
                     occ_logits.astype(np.float64))
        write_tensor(os.path.join(out_dir, "heads",
                                  f"sem_logits_scale{i}.msoc"),
                     sem_logits.astype(np.float64))

    os.makedirs(os.path.join(out_dir, "preds"), exist_ok=True)
    occ_prob, sem_prob = fixtures.oracle_predictions(scene, cfg.num_classes)
    tags = enumerate_tta()
    tag_dicts = [{"img_hflip": t.img_hflip, "vox_flip_x": t.vox_flip_x,
                  "vox_flip_y": t.vox_flip_y} for t in tags]
    with open(os.path.join(out_dir, "preds", "tags.json"), "w") as fh:
        json.dump({"model_a": tag_dicts, "model_b": tag_dicts}, fh, indent=2)
    for model in ("a", "b"):
        for j, tag in enumerate(tags):
            write_tensor(os.path.join(out_dir, "preds",
                                      f"model_{model}_entry{j}_occ.msoc"),
                         apply_flips(occ_prob, tag, 0, 1).astype(np.float32))
            write_tensor(os.path.join(out_dir, "preds",
                                      f"model_{model}_entry{j}_sem.msoc"),
                         apply_flips(sem_prob, tag, 1, 2).astype(np.float32))
