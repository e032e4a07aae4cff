"""Align voxel features from a previous frame into the current ego frame.

Ego poses map ego to world; the relative motion maps previous-ego points
into current-ego coordinates, and the grid is resampled accordingly before
temporal channel stacking.
"""

import numpy as np

from msocc import geometry as geo
from msocc.temporal import stack_temporal, warp_voxel_grid

grid = geo.VoxelGridSpec(20, 20, 4, origin=np.array([-4.0, -4.0, -1.0]),
                         voxel_size=np.array([0.4, 0.4, 0.4]))

pose_prev = geo.RigidTransform.from_yaw(0.00, (0.0, 0.0, 0.0))
pose_cur = geo.RigidTransform.from_yaw(0.05, (0.4, 0.0, 0.0))
rel = geo.relative_ego_motion(pose_prev, pose_cur)
print(f"relative translation (current frame): {rel.translation.round(3)}")

rng = np.random.default_rng(0)
prev_feats = rng.standard_normal((8, *grid.shape))
aligned = warp_voxel_grid(prev_feats, rel, grid)  # trilinear for features

# pure one-cell shift along x moves content exactly one cell (nearest mode)
shift = geo.RigidTransform.from_translation([grid.voxel_size[0], 0.0, 0.0])
shifted = warp_voxel_grid(prev_feats, shift, grid, mode="nearest")
print("one-cell shift exact:",
      bool(np.array_equal(shifted[:, 1:], prev_feats[:, :-1])))

cur_feats = rng.standard_normal((8, *grid.shape))
stack = stack_temporal([aligned, cur_feats])  # oldest first
print(f"temporal stack channels: {stack.shape[0]}")
