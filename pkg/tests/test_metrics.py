import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumbarseg.config import RunConfig, CrossvalConfig
from lumbarseg.dataset import LabelVolume
from lumbarseg.errors import ConfigError, EvaluationError
from lumbarseg.metrics import (MetricReport, assd, cross_validate, dice, evaluate, extract_surface, fold_splits,
                               format_table, hausdorff, jaccard)


# -- brute-force oracles, written without numpy set ops or spatial indexing --

def oracle_counts(a, b):
    inter = na = nb = union = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        inter += x and y
        union += x or y
        na += x
        nb += y
    return inter, union, na, nb


def oracle_surface(mask, spacing, origin):
    pts = []
    d, h, w = mask.shape
    for i, j, k in itertools.product(range(d), range(h), range(w)):
        if not mask[i, j, k]:
            continue
        for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            a, b, c = i + di, j + dj, k + dk
            if not (0 <= a < d and 0 <= b < h and 0 <= c < w) or not mask[a, b, c]:
                pts.append((origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]))
                break
    return pts


def oracle_distances(sa, sb):
    def nearest(p, pts):
        return min(math.dist(p, q) for q in pts)
    da = [nearest(p, sb) for p in sa]
    db = [nearest(q, sa) for q in sb]
    return max(max(da), max(db)), (sum(da) + sum(db)) / (len(da) + len(db))


def random_mask_pair(seed):
    r = np.random.default_rng(seed)
    shape = tuple(int(n) for n in r.integers(2, 11, 3))
    a = r.random(shape) < r.uniform(0.1, 0.6)
    b = r.random(shape) < r.uniform(0.1, 0.6)
    a.flat[0] = b.flat[-1] = True
    spacing = tuple(float(s) for s in r.uniform(0.3, 2.5, 3))
    origin = tuple(float(o) for o in r.uniform(-5, 5, 3))
    return a, b, spacing, origin


class TestOverlap:
    def test_identity(self):
        a = np.zeros((4, 4, 4), bool)
        a[1:3, 1:3, 1:3] = True
        assert dice(a, a) == 1.0 and jaccard(a, a) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4, 4), bool)
        b = a.copy()
        a[0], b[3] = True, True
        assert dice(a, b) == 0.0 and jaccard(a, b) == 0.0

    def test_offset_cubes(self):
        a = np.zeros((5, 5, 5), bool)
        b = a.copy()
        a[0:2, 0:2, 0:2] = True
        b[1:3, 0:2, 0:2] = True
        assert dice(a, b) == 0.5
        assert jaccard(a, b) == pytest.approx(1 / 3, abs=1e-15)

    def test_both_empty(self):
        z = np.zeros((3, 3, 3), bool)
        with pytest.raises(EvaluationError):
            dice(z, z)

    @pytest.mark.parametrize("seed", range(100))
    def test_match_counting_oracle(self, seed):
        a, b, _, _ = random_mask_pair(seed)
        inter, union, na, nb = oracle_counts(a, b)
        assert dice(a, b) == 2 * inter / (na + nb)
        assert jaccard(a, b) == inter / union
        assert dice(a, b) == dice(b, a)
        d = dice(a, b)
        assert abs(jaccard(a, b) - d / (2 - d)) <= 1e-12


class TestSurface:
    def test_single_voxel(self):
        m = np.zeros((3, 3, 3), bool)
        m[1, 1, 1] = True
        np.testing.assert_array_equal(extract_surface(m), [[1.0, 1.0, 1.0]])

    def test_cube_shell(self):
        m = np.zeros((7, 7, 7), bool)
        m[1:6, 1:6, 1:6] = True
        assert len(extract_surface(m)) == 98

    def test_border_counts_as_outside(self):
        assert len(extract_surface(np.ones((3, 3, 3), bool))) == 26

    def test_physical_coordinates(self):
        m = np.zeros((2, 2, 2), bool)
        m[1, 0, 1] = True
        np.testing.assert_allclose(extract_surface(m, (2.0, 3.0, 0.5), (10, 20, 30)), [[12.0, 20.0, 30.5]])

    def test_empty(self):
        with pytest.raises(EvaluationError):
            extract_surface(np.zeros((2, 2, 2), bool))


class TestDistances:
    def test_points_three_mm_apart(self):
        a, b = np.array([[0.0, 0, 0]]), np.array([[0.0, 3, 0]])
        assert hausdorff(a, b) == 3.0 and assd(a, b) == 3.0

    def test_identity(self):
        pts = np.random.default_rng(0).normal(size=(20, 3))
        assert hausdorff(pts, pts) == 0.0 and assd(pts, pts) == 0.0

    @pytest.mark.parametrize("seed", range(100))
    def test_match_pairwise_oracle(self, seed):
        a, b, spacing, origin = random_mask_pair(seed)
        sa, sb = extract_surface(a, spacing, origin), extract_surface(b, spacing, origin)
        oa, ob = oracle_surface(a, spacing, origin), oracle_surface(b, spacing, origin)
        assert sorted(map(tuple, sa.tolist())) == pytest.approx(sorted(oa), abs=1e-12)
        assert len(sb) == len(ob)
        hd, asd = oracle_distances(oa, ob)
        assert abs(hausdorff(sa, sb) - hd) <= 1e-9
        assert abs(assd(sa, sb) - asd) <= 1e-9
        assert hausdorff(sa, sb) >= assd(sa, sb)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_order_invariant(self, seed):
        r = np.random.default_rng(seed)
        a, b = r.normal(size=(15, 3)), r.normal(size=(9, 3))
        pa, pb = r.permutation(15), r.permutation(9)
        assert hausdorff(a, b) == hausdorff(a[pa], b[pb]) == hausdorff(b, a)
        assert assd(a[pa], b[pb]) == pytest.approx(assd(b, a), rel=1e-12)


def labels_volume(data, spacing=(1.5, 1.0, 1.0)):
    return LabelVolume(np.asarray(data, np.uint8), spacing)


class TestEvaluate:
    @pytest.fixture
    def truth(self):
        t = np.zeros((20, 8, 8), np.uint8)
        for k in range(5):
            t[2 + 3 * k:4 + 3 * k, 2:6, 2:6] = k + 1
        return labels_volume(t)

    def test_identity(self, truth):
        rep = evaluate(truth, truth)
        for row in rep.labels.values():
            assert row == {"dc": 1.0, "jc": 1.0, "hd_mm": 0.0, "assd_mm": 0.0}
        assert rep.lumbar()["dc"] == 1.0

    def test_absent_truth_label_excluded(self, truth):
        t = truth.data.copy()
        t[t == 5] = 0
        rep = evaluate(labels_volume(t), labels_volume(t))
        assert rep.absent == [5] and 5 not in rep.labels

    def test_missing_prediction_scores_zero(self, truth):
        p = truth.data.copy()
        p[p == 2] = 0
        rep = evaluate(labels_volume(p), truth)
        assert rep.labels[2]["dc"] == 0.0 and rep.labels[2]["hd_mm"] is None
        assert rep.lumbar()["dc"] == pytest.approx(0.8)

    def test_geometry_mismatch(self, truth):
        with pytest.raises(EvaluationError):
            evaluate(labels_volume(truth.data, spacing=(1.0, 1.0, 1.0)), truth)

    def test_table_layout(self, truth):
        rep = evaluate(truth, truth)
        d = rep.to_dict()
        assert set(d["lumbar"]) == {"dc", "jc", "hd_mm", "assd_mm"}
        assert list(d["labels"]) == ["L1", "L2", "L3", "L4", "L5"]


class TestCrossval:
    def test_splits(self):
        splits = fold_splits(15, 5, 3, seed=7)
        assert len(splits) == 5
        for train, test in splits:
            assert len(train) == 12 and len(test) == 3
            assert sorted(train + test) == list(range(15))
        assert splits == fold_splits(15, 5, 3, seed=7)
        assert splits != fold_splits(15, 5, 3, seed=8)

    def test_too_many_held_out(self):
        with pytest.raises(ConfigError):
            fold_splits(3, 1, 3, seed=0)

    def test_identical_fold_values(self):
        cfg = RunConfig(crossval=CrossvalConfig(folds=4, held_out=2))
        t = np.zeros((6, 4, 4), np.uint8)
        t[1:3, 1:3, 1:3] = 1
        vol = labels_volume(t)

        def stub(train, test, cfg, seed):
            return [(evaluate(vol, vol), 0.9) for _ in test]

        rep = cross_validate([(None, None, None)] * 6, cfg, seed=1, pipeline=stub)
        summary = rep.summary()
        assert summary["L1"]["dc"] == (1.0, 0.0)
        assert summary["Lumbar"]["assd_mm"] == (0.0, 0.0)
        assert rep.roi_iou() == pytest.approx((0.9, 0.0))
        assert "Lumbar" in rep.table() and "n/a" in rep.table()
        assert '"roi_iou"' in rep.to_json()

    def test_format_table_percent(self):
        text = format_table({"L1": {"dc": (0.5, 0.1), "jc": (0.25, 0.0), "hd_mm": (3.0, 1.0),
                                    "assd_mm": (None, None)}})
        assert "50.00 ± 10.00" in text and "3.00 ± 1.00" in text and "n/a" in text


def test_report_empty_lumbar():
    assert MetricReport().lumbar()["dc"] is None
