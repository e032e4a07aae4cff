"""Deterministic synthetic scenes for desk-scale verification.

Everything here is seeded and reproducible byte-for-byte: textures come
from an integer hash (no shared RNG state across platforms), scene layout
from numpy's seeded Generator, and depth from integer grid traversal of the
occupancy grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gt_multiscale import FREE
from .geometry import (CameraRig, FrustumSpec, Intrinsics, RigidTransform,
                       VoxelGridSpec, project, unproject)

__all__ = [
    "SyntheticScene",
    "make_scene",
    "textured_plane_features",
    "value_noise",
    "raymarch",
    "oracle_predictions",
    "oracle_logits",
]

_GROUND_CLASS = 11  # Driveable Surface


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _hash_unit(seed: int, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
    """Hash lattice cell (ix, iy) under `seed` to a float in [-1, 1)."""
    key = (_splitmix64(np.asarray(ix, dtype=np.int64).astype(np.uint64))
           ^ _splitmix64(np.asarray(iy, dtype=np.int64).astype(np.uint64)
                         + np.uint64(0x6A09E667F3BCC909))
           ^ _splitmix64(np.full(1, seed, dtype=np.uint64)))
    h = _splitmix64(key)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53) * 2.0 - 1.0


def value_noise(seed: int, x: np.ndarray, y: np.ndarray,
                scale: float = 0.2) -> np.ndarray:
    """Bilinear value noise over a `scale`-meter lattice; C0-continuous and
    exactly evaluable at any point."""
    gx = np.asarray(x, dtype=np.float64) / scale
    gy = np.asarray(y, dtype=np.float64) / scale
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = gx - x0
    fy = gy - y0
    v00 = _hash_unit(seed, x0, y0)
    v10 = _hash_unit(seed, x0 + 1, y0)
    v01 = _hash_unit(seed, x0, y0 + 1)
    v11 = _hash_unit(seed, x0 + 1, y0 + 1)
    return (v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy)
            + v01 * (1 - fx) * fy + v11 * fx * fy)


def textured_plane_features(d_star: float, k: Intrinsics, channels: int = 32,
                            baseline: float = 2.0, seed: int = 0,
                            texture_scale: float = 0.15):
    """Two views of a fronto-parallel textured plane at depth d_star.

    The previous camera sits at (baseline, 0, 0) in the current frame with
    the same orientation, so the plane maps between the views by a pure
    pixel shift of fx * baseline / d_star. Both feature maps sample the same
    continuous texture exactly. Returns (cur, prev, rel) where rel maps
    previous-ego to current-ego coordinates (identity cam_to_ego assumed).
    """
    us = np.arange(k.width) + 0.5
    vs = np.arange(k.height) + 0.5
    uu, vv = np.meshgrid(us, vs)
    px = (uu - k.cx) * d_star / k.fx
    py = (vv - k.cy) * d_star / k.fy
    cur = np.stack([value_noise(seed * 1013 + c, px, py, texture_scale)
                    for c in range(channels)])
    prev = np.stack([value_noise(seed * 1013 + c, px + baseline, py, texture_scale)
                     for c in range(channels)])
    rel = RigidTransform.from_translation([baseline, 0.0, 0.0])
    return cur.astype(np.float64), prev.astype(np.float64), rel


def raymarch(occ: np.ndarray, grid: VoxelGridSpec, origins: np.ndarray,
             dirs: np.ndarray, t_max: float = 100.0) -> np.ndarray:
    """First-hit parameter t along rays p = origin + t * dir through an
    occupancy grid, via integer grid traversal (Amanatides-Woo). Returns
    inf where a ray hits nothing within t_max.

    dirs need not be unit length; t is in units of |dir|.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    o, d = np.broadcast_arrays(o, d)
    n_rays = o.shape[0]
    n = np.array(grid.shape)
    vs = grid.voxel_size
    org = grid.origin

    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (org - o) / d
        t_hi = (org + n * vs - o) / d
    t1 = np.where(np.isnan(t_lo), -np.inf, np.minimum(t_lo, t_hi))
    t2 = np.where(np.isnan(t_hi), np.inf, np.maximum(t_lo, t_hi))
    # axes with zero direction: inside the slab or never
    zero = d == 0
    inside_slab = (o >= org) & (o < org + n * vs)
    t1 = np.where(zero, np.where(inside_slab, -np.inf, np.inf), t1)
    t2 = np.where(zero, np.where(inside_slab, np.inf, -np.inf), t2)
    t_enter = np.maximum(t1.max(axis=1), 0.0)
    t_exit = np.minimum(t2.min(axis=1), t_max)

    active = t_enter < t_exit
    eps = 1e-9
    t = t_enter + eps
    cell = np.floor((o + t[:, None] * d - org) / vs).astype(np.int64)
    cell = np.clip(cell, 0, n - 1)
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(d != 0, np.abs(vs / d), np.inf)
        next_bound = org + (cell + (step > 0)) * vs
        t_next = np.where(d != 0, (next_bound - o) / d, np.inf)

    t_hit = np.full(n_rays, np.inf)
    entry_t = t_enter.copy()
    occ_flat = np.asarray(occ).astype(bool).reshape(-1)
    strides = np.array([grid.ny * grid.nz, grid.nz, 1])

    max_steps = int(n.sum()) + 4
    for _ in range(max_steps):
        if not active.any():
            break
        flat = (cell[active] * strides).sum(axis=1)
        hit = occ_flat[flat]
        idx = np.nonzero(active)[0]
        hit_idx = idx[hit]
        t_hit[hit_idx] = entry_t[hit_idx]
        active[hit_idx] = False

        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        axis = np.argmin(t_next[idx], axis=1)
        t_cross = t_next[idx, axis]
        entry_t[idx] = t_cross
        cell[idx, axis] += step[idx, axis]
        t_next[idx, axis] += delta[idx, axis]
        out = ((cell[idx, axis] < 0) | (cell[idx, axis] >= n[axis])
               | (t_cross > t_exit[idx]))
        active[idx[out]] = False
    return t_hit


@dataclass(frozen=True)
class SyntheticScene:
    grid: VoxelGridSpec
    gt_occ: np.ndarray        # (nx, ny, nz) uint8
    gt_sem: np.ndarray        # (nx, ny, nz) uint8, FREE where unoccupied
    mask: np.ndarray          # (nx, ny, nz) bool
    rig: CameraRig
    poses: tuple              # per-frame ego -> global
    gt_depth: np.ndarray      # (N, H, W) z-depth in meters, inf = no hit
    seed: int


def _default_rig(num_cameras: int, width: int, height: int,
                 focal: float, cam_height: float) -> CameraRig:
    cams = []
    for i in range(num_cameras):
        yaw = 2 * math.pi * i / num_cameras
        c, s = math.cos(yaw), math.sin(yaw)
        # camera: x right, y down, z forward; forward = ego (cos, sin, 0)
        r = np.array([[s, 0.0, c],
                      [-c, 0.0, s],
                      [0.0, -1.0, 0.0]])
        k = Intrinsics(fx=focal, fy=focal, cx=width / 2, cy=height / 2,
                       width=width, height=height)
        cams.append((k, RigidTransform(r, np.array([0.0, 0.0, cam_height]))))
    return CameraRig(tuple(cams))


def make_scene(grid: VoxelGridSpec | None = None, num_cameras: int = 6,
               num_frames: int = 9, num_boxes: int = 8, seed: int = 0,
               image_width: int = 64, image_height: int = 48,
               focal: float = 40.0, num_classes: int = 17) -> SyntheticScene:
    """Boxes on a ground plane, a surround-view rig, smooth ego motion, and
    ray-marched per-camera depth. Identical arguments give byte-identical
    output."""
    if grid is None:
        grid = VoxelGridSpec(40, 40, 8, origin=np.array([-8.0, -8.0, -1.0]),
                             voxel_size=np.array([0.4, 0.4, 0.4]))
    if num_frames < 1 or num_boxes < 0:
        raise ValueError("degenerate scene configuration")
    rng = np.random.default_rng(seed)

    sem = np.full(grid.shape, FREE, dtype=np.uint8)
    sem[:, :, 0] = _GROUND_CLASS
    for _ in range(num_boxes):
        size = rng.integers(2, 6, size=3)
        size[2] = min(size[2], grid.nz - 1)
        lo = np.array([rng.integers(0, grid.nx - size[0]),
                       rng.integers(0, grid.ny - size[1]),
                       1 + rng.integers(0, max(grid.nz - 1 - size[2], 1))])
        label = int(rng.integers(0, num_classes))
        sem[lo[0]:lo[0] + size[0], lo[1]:lo[1] + size[1],
            lo[2]:lo[2] + size[2]] = label
    occ = (sem != FREE).astype(np.uint8)

    rig = _default_rig(num_cameras, image_width, image_height, focal,
                       cam_height=0.8)

    speed = 0.5
    yaw_rate = 0.02
    poses = tuple(
        RigidTransform.from_yaw(yaw_rate * t, (speed * t, 0.0, 0.0))
        for t in range(num_frames)
    )

    # per-camera z-depth by grid traversal at the current (last) frame
    depths = []
    for k, cam_to_ego in rig.cameras:
        us = np.arange(k.width) + 0.5
        vs = np.arange(k.height) + 0.5
        uu, vv = np.meshgrid(us, vs)
        dirs_cam = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy,
                             np.ones_like(uu)], axis=-1).reshape(-1, 3)
        dirs_ego = dirs_cam @ cam_to_ego.rotation.T
        origin = cam_to_ego.translation
        t_hit = raymarch(occ, grid, origin[None, :], dirs_ego)
        depths.append(t_hit.reshape(k.height, k.width))
    gt_depth = np.stack(depths)

    # visibility: voxel centers that project into any camera image
    centers = grid.cell_centers().reshape(-1, 3)
    mask = np.zeros(len(centers), dtype=bool)
    for k, cam_to_ego in rig.cameras:
        cam_pts = (centers - cam_to_ego.translation) @ cam_to_ego.rotation
        u, v, z = project(cam_pts, k)
        mask |= (z > 0.1) & (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    mask = mask.reshape(grid.shape)

    return SyntheticScene(grid, occ, sem, mask, rig, poses, gt_depth, seed)


def oracle_predictions(scene: SyntheticScene, num_classes: int = 17):
    """Probability volumes that reproduce the ground truth exactly:
    occ_prob = occupancy, sem_prob = one-hot semantics (class 0 on FREE
    voxels, which thresholding removes via occ_prob = 0)."""
    occ_prob = scene.gt_occ.astype(np.float64)
    labels = np.where(scene.gt_sem == FREE, 0, scene.gt_sem).astype(np.int64)
    sem_prob = np.moveaxis(np.eye(num_classes)[labels], -1, 0)
    return occ_prob, sem_prob


def oracle_logits(scene: SyntheticScene, num_classes: int = 17,
                  magnitude: float = 10.0):
    """Saturated head logits matching the ground truth, for loss-stack runs."""
    occ_logits = np.where(scene.gt_occ == 1, magnitude, -magnitude)
    labels = np.where(scene.gt_sem == FREE, 0, scene.gt_sem).astype(np.int64)
    sem_logits = np.moveaxis(np.eye(num_classes)[labels], -1, 0) * 2 - 1
    return occ_logits.astype(np.float64), sem_logits * magnitude
