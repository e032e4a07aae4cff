import numpy as np
import pytest

from msocc import fixtures, temporal
from msocc import geometry as geo


@pytest.fixture
def k():
    return geo.Intrinsics(fx=50, fy=50, cx=24, cy=16, width=48, height=32)


@pytest.fixture
def frustum():
    return geo.FrustumSpec(48, 32, 1, depth_min=6.5, depth_max=14.5,
                           depth_step=1.0)


def small_grid():
    return geo.VoxelGridSpec(8, 8, 4, origin=np.array([-2.0, -2.0, -1.0]),
                             voxel_size=np.array([0.5, 0.5, 0.5]))


class TestCostVolume:
    def test_zero_parallax_degeneracy(self, k, frustum):
        rng = np.random.default_rng(0)
        cur = rng.standard_normal((4, 32, 48))
        cv = temporal.build_cost_volume(cur, cur,
                                        geo.RigidTransform.identity(),
                                        k, frustum)
        want = (cur ** 2).mean(axis=0)
        for d in range(frustum.num_bins):
            assert np.allclose(cv[d], want, atol=1e-12)

    def test_plane_fixture_argmax(self, k, frustum):
        cur, prev, rel = fixtures.textured_plane_features(10.0, k)
        cv = temporal.build_cost_volume(cur, prev, rel, k, frustum)
        am = np.argmax(cv, axis=0)
        max_shift = k.fx * 2.0 / frustum.bin_centers().min()
        interior = np.zeros((32, 48), bool)
        interior[:, int(np.ceil(max_shift)) + 1:] = True
        true_bin = int(np.argmin(np.abs(frustum.bin_centers() - 10.0)))
        assert (am[interior] == true_bin).mean() >= 0.95

    def test_out_of_bounds_scores_zero(self, k, frustum):
        rng = np.random.default_rng(1)
        cur = rng.standard_normal((2, 32, 48)) + 5.0
        prev = rng.standard_normal((2, 32, 48)) + 5.0
        # huge lateral motion pushes every reprojection off the image
        rel = geo.RigidTransform.from_translation([1e5, 0.0, 0.0])
        cv = temporal.build_cost_volume(cur, prev, rel, k, frustum)
        assert np.all(cv == 0.0)

    def test_bilinear_in_prev_features(self, k, frustum):
        rng = np.random.default_rng(2)
        cur = rng.standard_normal((3, 32, 48))
        prev = rng.standard_normal((3, 32, 48))
        rel = geo.RigidTransform.from_translation([0.7, 0.1, 0.0])
        a = temporal.build_cost_volume(cur, 2.5 * prev, rel, k, frustum)
        b = 2.5 * temporal.build_cost_volume(cur, prev, rel, k, frustum)
        assert np.allclose(a, b, atol=1e-9)

    def test_shape_mismatch(self, k, frustum):
        with pytest.raises(ValueError):
            temporal.build_cost_volume(np.zeros((2, 32, 48)),
                                       np.zeros((2, 32, 47)),
                                       geo.RigidTransform.identity(),
                                       k, frustum)


class TestRescaleCostVolume:
    def test_constant(self):
        cv = np.full((5, 8, 16), 3.25)
        for s in (8, 16, 32):
            out = temporal.rescale_cost_volume(cv, s) if s <= 16 else None
            if out is not None:
                assert np.allclose(out, 3.25)

    def test_block_mean(self):
        cv = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out = temporal.rescale_cost_volume(cv, 8)
        assert out.shape == (1, 1, 1)
        assert np.isclose(out[0, 0, 0], 2.5)

    def test_composition(self):
        rng = np.random.default_rng(3)
        cv = rng.standard_normal((6, 16, 32))
        once = temporal.rescale_cost_volume(cv, 16)
        twice = temporal.rescale_cost_volume(
            temporal.rescale_cost_volume(cv, 8), 16, source_stride=8)
        assert np.allclose(once, twice, atol=1e-12)

    def test_indivisible_rejected(self):
        with pytest.raises(ValueError):
            temporal.rescale_cost_volume(np.zeros((2, 3, 4)), 8)
        with pytest.raises(ValueError):
            temporal.rescale_cost_volume(np.zeros((2, 4, 4)), 6)


def trilinear_oracle(prev, grid, rel):
    """Scalar 8-neighbor weighted sum per output cell."""
    inv = geo.invert(rel)
    c = prev.shape[0]
    out = np.zeros_like(prev, dtype=np.float64)
    n = np.array(grid.shape)
    for ix in range(grid.nx):
        for iy in range(grid.ny):
            for iz in range(grid.nz):
                center = grid.origin + (np.array([ix, iy, iz]) + 0.5) \
                    * grid.voxel_size
                src = inv.apply(center)
                cc = (src - grid.origin) / grid.voxel_size - 0.5
                lo = np.floor(cc).astype(int)
                fr = cc - lo
                acc = np.zeros(c)
                for b in range(8):
                    off = np.array([(b >> 2) & 1, (b >> 1) & 1, b & 1])
                    cell = lo + off
                    if ((cell < 0) | (cell >= n)).any():
                        continue
                    wgt = np.prod(np.where(off == 1, fr, 1 - fr))
                    acc += wgt * prev[:, cell[0], cell[1], cell[2]]
                out[:, ix, iy, iz] = acc
    return out


class TestWarpVoxelGrid:
    def test_identity_nearest_exact(self):
        g = small_grid()
        rng = np.random.default_rng(4)
        a = rng.standard_normal((3, *g.shape))
        out = temporal.warp_voxel_grid(a, geo.RigidTransform.identity(), g,
                                       mode="nearest")
        assert np.array_equal(out, a)

    def test_identity_trilinear_exact(self):
        g = small_grid()
        rng = np.random.default_rng(5)
        a = rng.standard_normal((2, *g.shape))
        out = temporal.warp_voxel_grid(a, geo.RigidTransform.identity(), g)
        assert np.allclose(out, a, atol=1e-12)

    def test_lattice_aligned_shift(self):
        g = small_grid()
        rng = np.random.default_rng(6)
        a = rng.standard_normal((1, *g.shape))
        rel = geo.RigidTransform.from_translation([g.voxel_size[0], 0, 0])
        out = temporal.warp_voxel_grid(a, rel, g, mode="nearest")
        assert np.array_equal(out[:, 1:], a[:, :-1])
        assert np.all(out[:, 0] == 0)

    def test_roundtrip_interior(self):
        g = small_grid()
        rng = np.random.default_rng(7)
        a = rng.standard_normal((1, *g.shape))
        rel = geo.RigidTransform.from_translation([g.voxel_size[0],
                                                   -g.voxel_size[1], 0])
        back = temporal.warp_voxel_grid(
            temporal.warp_voxel_grid(a, rel, g, mode="nearest"),
            geo.invert(rel), g, mode="nearest")
        assert np.array_equal(back[:, 1:-1, 1:-1, :], a[:, 1:-1, 1:-1, :])

    @pytest.mark.parametrize("seed", range(5))
    def test_trilinear_matches_oracle(self, seed):
        g = small_grid()
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((2, *g.shape))
        rel = geo.RigidTransform.from_yaw(rng.uniform(-0.2, 0.2),
                                          rng.uniform(-0.3, 0.3, 3))
        out = temporal.warp_voxel_grid(a, rel, g)
        want = trilinear_oracle(a, g, rel)
        assert np.allclose(out, want, atol=1e-6)

    def test_bad_mode(self):
        g = small_grid()
        with pytest.raises(ValueError):
            temporal.warp_voxel_grid(np.zeros((1, *g.shape)),
                                     geo.RigidTransform.identity(), g,
                                     mode="cubic")


class TestStackTemporal:
    def test_single(self):
        a = np.ones((2, 3, 3, 2))
        assert np.array_equal(temporal.stack_temporal([a]), a)

    def test_two_blocks(self):
        a = np.zeros((2, 3, 3, 2))
        b = np.ones((2, 3, 3, 2))
        out = temporal.stack_temporal([a, b])
        assert np.array_equal(out[:2], a)
        assert np.array_equal(out[2:], b)

    def test_k8_roundtrip(self):
        rng = np.random.default_rng(8)
        grids = [rng.standard_normal((4, 3, 3, 2)) for _ in range(8)]
        out = temporal.stack_temporal(grids)
        assert out.shape[0] == 32
        for i, g in enumerate(grids):
            assert np.array_equal(out[4 * i:4 * (i + 1)], g)

    def test_mismatch_rejected(self):
        with pytest.raises(ValueError):
            temporal.stack_temporal([np.zeros((2, 3, 3, 2)),
                                     np.zeros((2, 3, 3, 3))])
