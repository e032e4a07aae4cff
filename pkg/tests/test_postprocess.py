import json

import numpy as np
import pytest

from msocc import postprocess as pp
from msocc.gt_multiscale import FREE


class TestEnumerateTta:
    def test_count(self):
        assert len(pp.enumerate_tta()) == 8

    def test_first_is_identity(self):
        t = pp.enumerate_tta()[0]
        assert (t.img_hflip, t.vox_flip_x, t.vox_flip_y) == (False, False, False)

    def test_all_distinct(self):
        assert len(set(pp.enumerate_tta())) == 8


class TestDeaugment:
    def random_entry(self, seed, k=4, n=6):
        rng = np.random.default_rng(seed)
        occ = rng.random((n, n, 3))
        sem = rng.random((k, n, n, 3))
        return occ, sem

    def test_identity_tag_unchanged(self):
        occ, sem = self.random_entry(0)
        tag = pp.AugmentationTag(False, False, False)
        o, s = pp.deaugment(tag, occ, sem)
        assert np.array_equal(o, occ) and np.array_equal(s, sem)

    @pytest.mark.parametrize("tag", pp.enumerate_tta())
    def test_involution(self, tag):
        occ, sem = self.random_entry(1)
        o1, s1 = pp.deaugment(tag, occ, sem)
        o2, s2 = pp.deaugment(tag, o1, s1)
        assert np.array_equal(o2, occ)
        assert np.array_equal(s2, sem)

    def test_x_flip_delta(self):
        occ = np.zeros((10, 10, 10))
        occ[3, 0, 0] = 1.0
        sem = np.zeros((2, 10, 10, 10))
        sem[0, 3, 0, 0] = 1.0
        o, s = pp.deaugment(pp.AugmentationTag(False, True, False), occ, sem)
        assert o[6, 0, 0] == 1.0 and o.sum() == 1.0
        assert s[0, 6, 0, 0] == 1.0 and s.sum() == 1.0

    def test_img_hflip_no_volume_change(self):
        occ, sem = self.random_entry(2)
        o, s = pp.deaugment(pp.AugmentationTag(True, False, False), occ, sem)
        assert np.array_equal(o, occ) and np.array_equal(s, sem)


class TestEnsemble:
    def test_identical_single_entries(self):
        rng = np.random.default_rng(3)
        occ = rng.random((4, 4, 2))
        sem = rng.random((3, 4, 4, 2))
        out_occ, _ = pp.ensemble([(occ, sem)], [(occ, sem)],
                                 pp.EnsembleConfig())
        assert np.allclose(out_occ, occ, atol=1e-12)

    def test_default_weights_favor_model_b(self):
        sem_a = np.zeros((6, 2, 2, 1)); sem_a[2] = 1.0
        sem_b = np.zeros((6, 2, 2, 1)); sem_b[5] = 1.0
        occ = np.ones((2, 2, 1))
        _, label = pp.ensemble([(occ, sem_a)], [(occ, sem_b)],
                               pp.EnsembleConfig())
        assert np.all(label == 5)

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(4)
        wa, wb = 0.45, 0.55
        a = [(rng.random((3, 3, 2)), rng.random((4, 3, 3, 2)))
             for _ in range(8)]
        b = [(rng.random((3, 3, 2)), rng.random((4, 3, 3, 2)))
             for _ in range(8)]
        occ, label = pp.ensemble(a, b, pp.EnsembleConfig(wa, wb))
        norm = wa * 8 + wb * 8
        want_occ = (wa * sum(o for o, _ in a)
                    + wb * sum(o for o, _ in b)) / norm
        want_sem = (wa * sum(s for _, s in a)
                    + wb * sum(s for _, s in b)) / norm
        assert np.allclose(occ, want_occ, atol=1e-12)
        assert np.array_equal(label, np.argmax(want_sem, axis=0))

    def test_convex_range(self):
        rng = np.random.default_rng(5)
        a = [(rng.random((3, 3, 2)), rng.random((2, 3, 3, 2)))
             for _ in range(3)]
        b = [(rng.random((3, 3, 2)), rng.random((2, 3, 3, 2)))
             for _ in range(5)]
        occ, _ = pp.ensemble(a, b, pp.EnsembleConfig())
        assert occ.min() >= -1e-12 and occ.max() <= 1 + 1e-12

    def test_permutation_invariant(self):
        rng = np.random.default_rng(6)
        a = [(rng.random((3, 3, 2)), rng.random((2, 3, 3, 2)))
             for _ in range(4)]
        b = [(rng.random((3, 3, 2)), rng.random((2, 3, 3, 2)))
             for _ in range(4)]
        o1, l1 = pp.ensemble(a, b)
        o2, l2 = pp.ensemble(a[::-1], b[::-1])
        assert np.allclose(o1, o2, atol=1e-12)
        assert np.array_equal(l1, l2)

    def test_argmax_scale_invariance(self):
        rng = np.random.default_rng(7)
        a = [(rng.random((3, 3, 2)), rng.random((2, 3, 3, 2)))]
        b = [(rng.random((3, 3, 2)), rng.random((2, 3, 3, 2)))]
        _, l1 = pp.ensemble(a, b)
        a9 = [(o, 9.0 * s) for o, s in a]
        b9 = [(o, 9.0 * s) for o, s in b]
        _, l2 = pp.ensemble(a9, b9)
        assert np.array_equal(l1, l2)

    def test_empty_or_mismatched_rejected(self):
        e = (np.zeros((2, 2, 1)), np.zeros((2, 2, 2, 1)))
        with pytest.raises(ValueError):
            pp.ensemble([], [e])
        bad = (np.zeros((3, 2, 1)), np.zeros((2, 3, 2, 1)))
        with pytest.raises(ValueError):
            pp.ensemble([e], [bad])


class TestThresholds:
    def test_table_matches_published_values(self):
        t = pp.DEFAULT_THRESHOLDS
        assert len(t) == 17
        assert t["Others"] == 0.92
        assert t["Pedestrian"] == 0.91
        assert t["Barrier"] == 0.94
        assert t["Driveable Surface"] == 0.96
        assert t["Vegetation"] == 0.92

    def test_car_kept(self):
        car = pp.CLASS_NAMES.index("Car")
        occ = np.full((1, 1, 1), 0.95)
        sem = np.full((1, 1, 1), car, np.uint8)
        out = pp.apply_thresholds(occ, sem, pp.DEFAULT_THRESHOLDS)
        assert out[0, 0, 0] == car

    def test_driveable_surface_dropped(self):
        ds = pp.CLASS_NAMES.index("Driveable Surface")
        occ = np.full((1, 1, 1), 0.955)
        sem = np.full((1, 1, 1), ds, np.uint8)
        out = pp.apply_thresholds(occ, sem, pp.DEFAULT_THRESHOLDS)
        assert out[0, 0, 0] == FREE

    def test_certain_occupancy_never_free(self):
        occ = np.ones((17, 1, 1))
        sem = np.arange(17, dtype=np.uint8).reshape(17, 1, 1)
        out = pp.apply_thresholds(occ, sem, pp.DEFAULT_THRESHOLDS)
        assert not (out == FREE).any()

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(8)
        occ = rng.random((5, 5, 2))
        sem = rng.integers(0, 17, (5, 5, 2)).astype(np.uint8)
        lo = pp.apply_thresholds(occ, sem, pp.DEFAULT_THRESHOLDS)
        raised = {k: min(v + 0.02, 0.999) for k, v in
                  pp.DEFAULT_THRESHOLDS.items()}
        hi = pp.apply_thresholds(occ, sem, raised)
        assert not ((lo == FREE) & (hi != FREE)).any()

    def test_load_table(self, tmp_path):
        p = tmp_path / "t.json"
        p.write_text(json.dumps(pp.DEFAULT_THRESHOLDS))
        assert pp.load_threshold_table(p) == pp.DEFAULT_THRESHOLDS

    def test_incomplete_table_rejected(self, tmp_path):
        t = dict(pp.DEFAULT_THRESHOLDS)
        t.pop("Car")
        p = tmp_path / "t.json"
        p.write_text(json.dumps(t))
        with pytest.raises(ValueError):
            pp.load_threshold_table(p)

    def test_out_of_range_rejected(self, tmp_path):
        t = dict(pp.DEFAULT_THRESHOLDS)
        t["Car"] = 1.5
        p = tmp_path / "t.json"
        p.write_text(json.dumps(t))
        with pytest.raises(ValueError):
            pp.load_threshold_table(p)
