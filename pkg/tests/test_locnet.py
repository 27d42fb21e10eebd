import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumbarseg.autodiff import Tensor, finite_difference_check, tensor_digest
from lumbarseg.config import LocalizerConfig
from lumbarseg.dataset import BoundingBox3D, PhantomSpec, Volume, gen_phantom
from lumbarseg.errors import AggregationError, ConfigError, LocalizationError, ShapeError, TrainingError
from lumbarseg.locnet import (CornerVotes, LocalizationNet, canny3d, density_mode, displacement_targets,
                              extract_patches, iou_loss_3d, kde_aggregate, mse_loss, network_from_checkpoint,
                              predict_roi, predict_votes, scott_bandwidth, train_localizer)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def box_iou_oracle(a, b):
    """Interval arithmetic on two (lo, hi) pairs, written independently of the loss."""
    inter = 1.0
    for k in range(3):
        lo = max(min(a[k], a[k + 3]), min(b[k], b[k + 3]))
        hi = min(max(a[k], a[k + 3]), max(b[k], b[k + 3]))
        inter *= max(0.0, hi - lo)
    va = np.prod([abs(a[k + 3] - a[k]) for k in range(3)])
    vb = np.prod([abs(b[k + 3] - b[k]) for k in range(3)])
    return inter / (va + vb - inter)


class TestCanny:
    def test_constant_volume_has_no_edges(self):
        assert canny3d(np.full((12, 12, 12), 3.0)).empty

    def test_step_gives_single_plane(self):
        img = np.zeros((16, 16, 16))
        img[8:] = 1.0
        pos = canny3d(img, sigma=1.0, low_threshold=0.05, high_threshold=0.2).positions
        assert len(pos) == 16 * 16
        assert len(np.unique(pos[:, 0])) == 1
        assert pos[0, 0] in (7, 8)

    def test_offset_invariant(self):
        img = gen_phantom(PhantomSpec(seed=2))[0].data
        a = canny3d(img).positions
        b = canny3d(img + 5.0).positions
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("low", [0.05, 0.1, 0.15])
    def test_raising_low_threshold_never_adds_voxels(self, low):
        img = gen_phantom(PhantomSpec(seed=4))[0].data
        base = {tuple(p) for p in canny3d(img, 1.0, low, 0.2).positions}
        higher = {tuple(p) for p in canny3d(img, 1.0, low + 0.04, 0.2).positions}
        assert higher <= base

    def test_bad_thresholds(self):
        with pytest.raises(ConfigError):
            canny3d(np.zeros((4, 4, 4)), low_threshold=0.3, high_threshold=0.2)

    def test_positions_sorted_and_inside(self):
        vol = gen_phantom(PhantomSpec(seed=5))[0]
        pos = canny3d(vol, volume_id="v").positions
        assert len(pos) > 0
        assert np.all(pos >= 0) and np.all(pos < np.array(vol.extents))
        order = np.lexsort(pos.T[::-1])
        np.testing.assert_array_equal(order, np.arange(len(pos)))


class TestNetwork:
    def test_output_and_feature_shapes(self, rng):
        net = LocalizationNet(widths=(2, 3, 4), reduction_width=8, hidden_width=5)
        out = net(Tensor(rng.standard_normal((2, 1, 32, 32, 32)).astype(np.float32)), "eval")
        assert out.shape == (2, 6)
        assert net.feature_shape == (2, 4, 4, 4, 4)

    def test_zero_output_layer(self, rng):
        net = LocalizationNet(widths=(2, 2, 2), reduction_width=4, hidden_width=4, zero_output=True)
        out = net(Tensor(rng.standard_normal((1, 1, 32, 32, 32)).astype(np.float32)), "train")
        np.testing.assert_array_equal(out.data, 0.0)

    def test_wrong_patch_shape(self):
        net = LocalizationNet(widths=(2, 2, 2), reduction_width=4, hidden_width=4)
        with pytest.raises(ShapeError):
            net(Tensor(np.zeros((1, 1, 16, 32, 32), np.float32)))

    def test_patch_size_must_divide_by_8(self):
        with pytest.raises(ShapeError):
            LocalizationNet(patch_size=20)


class TestMSE:
    def test_known_value(self):
        p = Tensor(np.array([[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]]), requires_grad=True)
        loss = mse_loss(p, np.zeros((1, 6)))
        assert float(loss.data) == pytest.approx(14.0 / 6)
        loss.backward()
        np.testing.assert_allclose(p.grad, 2 * p.data / 6)

    def test_zero_at_target(self, rng):
        t = rng.standard_normal((4, 6))
        assert float(mse_loss(Tensor(t), t).data) == 0.0


class TestIoULoss:
    def test_identical_boxes(self):
        t = np.array([[0.0, 0, 0, 3, 4, 5]])
        res = iou_loss_3d(Tensor(t.copy()), t)
        assert float(res.loss.data) < 1e-5

    def test_half_offset_unit_cubes(self):
        pred = Tensor(np.array([[0.5, 0, 0, 1.5, 1, 1]]))
        res = iou_loss_3d(pred, np.array([[0.0, 0, 0, 1, 1, 1]]))
        assert float(res.loss.data) == pytest.approx(math.log(3), abs=1e-6)

    def test_monotone_along_interpolation(self):
        target = np.array([0.0, 0, 0, 4, 4, 4])
        start = np.array([2.0, 1.0, -1.0, 6.0, 5.0, 3.0])
        values = [float(iou_loss_3d(Tensor((start + (target - start) * s)[None]), target[None]).loss.data)
                  for s in np.linspace(0, 1, 11)]
        assert all(b < a for a, b in zip(values, values[1:]))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=12, max_size=12))
    def test_matches_interval_oracle(self, xs):
        p, t = np.array(xs[:6]), np.array(xs[6:])
        t[3:] = t[:3] + np.abs(t[3:] - t[:3]) + 0.5
        if np.any(np.abs(p[3:] - p[:3]) < 1e-3):
            return
        res = iou_loss_3d(Tensor(p[None]), t[None])
        iou = box_iou_oracle(p, t)
        assert res.disjoint[0] == (iou == 0)
        assert res.per_sample[0] == pytest.approx(-math.log(iou + 1e-7), rel=1e-9, abs=1e-9)

    def test_corners_are_sorted(self):
        swapped = Tensor(np.array([[2.0, 2, 2, 0, 0, 0]]))
        res = iou_loss_3d(swapped, np.array([[0.0, 0, 0, 2, 2, 2]]))
        assert float(res.loss.data) < 1e-5

    def test_gradient_matches_finite_differences(self, rng):
        target = np.array([[0.0, 0, 0, 4, 5, 6], [1.0, -1, 0, 3, 2, 2]])
        pred = Tensor(target + rng.uniform(-0.7, 0.7, target.shape), requires_grad=True)
        rep = finite_difference_check(lambda p: iou_loss_3d(p, target).loss, [pred], step=1e-5)
        assert rep.passed, rep

    def test_disjoint_samples_excluded(self):
        target = np.array([[0.0, 0, 0, 1, 1, 1], [0.0, 0, 0, 1, 1, 1]])
        pred = Tensor(np.array([[0.0, 0, 0, 1, 1, 0.5], [5.0, 5, 5, 6, 6, 6]]), requires_grad=True)
        res = iou_loss_3d(pred, target)
        np.testing.assert_array_equal(res.disjoint, [False, True])
        assert float(res.loss.data) == pytest.approx(-math.log(0.5 + 1e-7))
        res.loss.backward()
        np.testing.assert_array_equal(pred.grad[1], 0.0)

    def test_all_disjoint_has_zero_gradient(self):
        pred = Tensor(np.array([[5.0, 5, 5, 6, 6, 6]]), requires_grad=True)
        res = iou_loss_3d(pred, np.array([[0.0, 0, 0, 1, 1, 1]]))
        res.loss.backward()
        np.testing.assert_array_equal(pred.grad, 0.0)

    def test_reference_shift_cancels(self, rng):
        t = np.array([[-3.0, -2, -1, 4, 5, 6]])
        p = t + rng.uniform(-1, 1, t.shape)
        a = iou_loss_3d(Tensor(p), t).per_sample
        b = iou_loss_3d(Tensor(p), t, reference=np.array([10.0, 20, 30])).per_sample
        np.testing.assert_allclose(a, b, rtol=1e-9)


class TestKDE:
    def test_identical_votes(self):
        pts = np.tile([3.0, 4.0, 5.0], (50, 1))
        np.testing.assert_array_equal(density_mode(pts), [3.0, 4.0, 5.0])

    def test_recovers_noisy_corner(self):
        hits = 0
        for seed in range(20):
            r = np.random.default_rng(seed)
            truth = r.uniform(10, 50, 3)
            votes = truth + r.normal(0, 2.0, (500, 3))
            hits += np.all(np.abs(density_mode(votes) - truth) <= 1.0)
        assert hits >= 19

    def test_larger_cluster_wins(self, rng):
        a = np.array([10.0, 10, 10]) + rng.normal(0, 1, (400, 3))
        b = np.array([40.0, 40, 40]) + rng.normal(0, 1, (100, 3))
        mode = density_mode(np.concatenate([b, a]))
        assert np.linalg.norm(mode - 10.0) < 2.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_permutation_invariant(self, seed):
        r = np.random.default_rng(seed)
        pts = np.round(r.normal(0, 3, (60, 3)))  # rounding creates density ties
        perm = r.permutation(60)
        np.testing.assert_array_equal(density_mode(pts), density_mode(pts[perm]))

    def test_bandwidth_floor(self):
        bw = scott_bandwidth(np.zeros((10, 3)), floor=1.0)
        np.testing.assert_array_equal(bw, 1.0)

    def test_empty_votes(self):
        with pytest.raises(AggregationError):
            kde_aggregate(CornerVotes(np.zeros((0, 3)), np.zeros((0, 3))))

    def test_aggregate_sorts_corners(self):
        votes = CornerVotes(np.tile([9.0, 9, 9], (5, 1)), np.tile([1.0, 2, 3], (5, 1)))
        box = kde_aggregate(votes)
        assert box.corner_low == (1.0, 2.0, 3.0) and box.corner_high == (9.0, 9.0, 9.0)

    def test_votes_are_reference_plus_displacement(self, rng):
        refs = rng.integers(0, 40, (7, 3))
        disp = rng.normal(0, 5, (7, 6))
        v = CornerVotes.from_displacements(refs, disp)
        np.testing.assert_array_equal(v.low, refs + disp[:, :3])
        np.testing.assert_array_equal(v.high, refs + disp[:, 3:])


class TestPatches:
    def test_standardised(self):
        vol, _, _ = gen_phantom(PhantomSpec(seed=1))
        x = extract_patches(vol.data, [(40, 20, 20)], 32)
        assert x.shape == (1, 1, 32, 32, 32)
        assert abs(float(x.mean())) < 1e-5 and abs(float(x.std()) - 1) < 1e-4

    def test_targets(self):
        box = BoundingBox3D((1.0, 2.0, 3.0), (10.0, 20.0, 30.0))
        t = displacement_targets([(5, 5, 5)], box)
        np.testing.assert_array_equal(t, [[-4, -3, -2, 5, 15, 25]])


TINY = LocalizerConfig(widths=(2, 2, 2), reduction_width=8, hidden_width=4, train_refs_per_volume=4,
                       infer_refs=20, batch_size=4, round1_epochs=2, round2_epochs=1)


@pytest.fixture(scope="module")
def tiny_cases():
    return [gen_phantom(PhantomSpec(seed=s))[::2] for s in (1, 2)]


@pytest.fixture(scope="module")
def tiny_run(tiny_cases):
    return train_localizer(tiny_cases, TINY, seed=3)


class TestTraining:
    def test_history_lengths(self, tiny_run):
        assert len(tiny_run.history["round1"]) == 2
        assert len(tiny_run.history["round2"]) == 1
        assert all(np.isfinite(tiny_run.history["round1"]))

    def test_deterministic(self, tiny_cases, tiny_run):
        again = train_localizer(tiny_cases, TINY, seed=3)
        for k, v in tiny_run.checkpoint.tensors.items():
            assert tensor_digest(v) == tensor_digest(again.checkpoint.tensors[k])

    def test_round_two_starts_from_round_one(self, tiny_run):
        handoff = tiny_run.checkpoint.metadata["round1_digests"]
        assert handoff == {k: tensor_digest(v) for k, v in tiny_run.round1.tensors.items()}

    def test_no_edges_anywhere(self):
        flat = Volume(np.zeros((40, 40, 40), np.float32))
        with pytest.raises(TrainingError):
            train_localizer([(flat, BoundingBox3D((1, 1, 1), (5, 5, 5)))], TINY)

    def test_predict_roi_returns_valid_box(self, tiny_cases, tiny_run):
        box = predict_roi(tiny_cases[0][0], tiny_run.checkpoint, TINY)
        assert all(h > l for l, h in zip(box.corner_low, box.corner_high))

    def test_votes_use_subsampled_references(self, tiny_cases, tiny_run):
        net = network_from_checkpoint(tiny_run.checkpoint)
        refs, votes = predict_votes(tiny_cases[0][0], net, TINY)
        assert len(refs) == TINY.infer_refs == len(votes.low)

    def test_predict_without_edges(self, tiny_run):
        with pytest.raises(LocalizationError):
            predict_roi(Volume(np.ones((40, 40, 40), np.float32)), tiny_run.checkpoint, TINY)
