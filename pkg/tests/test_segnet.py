import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from lumbarseg.autodiff import Tensor, finite_difference_check, load_checkpoint, save_checkpoint, tensor_digest
from lumbarseg.config import SegmenterConfig
from lumbarseg.dataset import LabelVolume, PhantomSpec, Volume, gen_phantom
from lumbarseg.errors import CheckpointError, DataError, ShapeError, TrainingError
from lumbarseg.segnet import (HEAD, ProbabilityMap, SegmentationNet, augmented_crop, compute_class_weights,
                              init_from_binary, inherited_digests, postprocess, sliding_window_infer, tile_starts,
                              train_binary, train_multiclass, weighted_cross_entropy)


@pytest.fixture
def rng():
    return np.random.default_rng(99)


class TestNetwork:
    @pytest.mark.parametrize("depth, extents", [(2, (8, 12, 16)), (3, (16, 16, 24)), (4, (16, 32, 16)),
                                                (3, (48, 32, 32))])
    def test_output_extents_match_input(self, depth, extents, rng):
        net = SegmentationNet(depth=depth, base_width=2, class_count=6)
        out = net(Tensor(rng.standard_normal((1, 1) + extents).astype(np.float32)), "eval")
        assert out.shape == (1, 6) + extents

    def test_indivisible_extents(self):
        net = SegmentationNet(depth=3, base_width=2)
        with pytest.raises(ShapeError):
            net(Tensor(np.zeros((1, 1, 16, 16, 12), np.float32)))

    def test_zero_head_gives_uniform_softmax(self, rng):
        net = SegmentationNet(depth=2, base_width=2, class_count=6, zero_head=True)
        out = net(Tensor(rng.standard_normal((1, 1, 8, 8, 8)).astype(np.float32)), "eval")
        p = np.exp(out.data) / np.exp(out.data).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(p, 1 / 6, atol=1e-7)

    @pytest.mark.parametrize("level", [0, 1, 2])
    def test_every_shortcut_is_connected(self, level, rng):
        net = SegmentationNet(depth=3, base_width=2, class_count=2, seed=4)
        x = Tensor(rng.standard_normal((1, 1, 8, 8, 8)).astype(np.float32))
        full = net.forward(x, "eval").data
        cut = net.forward(x, "eval", ablate_skip=level).data
        assert not np.allclose(full, cut)

    def test_bad_class_count(self):
        with pytest.raises(ValueError):
            SegmentationNet(class_count=3)


class TestCrossEntropy:
    def test_uniform_two_class(self):
        logits = Tensor(np.zeros((1, 2, 2, 2, 2)))
        loss = weighted_cross_entropy(logits, np.zeros((1, 2, 2, 2), int))
        assert float(loss.data) == pytest.approx(math.log(2), abs=1e-12)

    def test_confident_correct(self):
        z = np.full((1, 3, 1, 1, 2), -50.0)
        z[0, 2] = 50.0
        assert float(weighted_cross_entropy(Tensor(z), np.full((1, 1, 1, 2), 2)).data) < 1e-12

    def test_matches_direct_formula(self, rng):
        z = rng.standard_normal((2, 4, 2, 3, 2))
        y = rng.integers(0, 4, (2, 2, 3, 2))
        w = rng.uniform(0.5, 2, 4)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        expected = np.mean([w[y[n, i, j, k]] * -np.log(p[n, y[n, i, j, k], i, j, k])
                            for n in range(2) for i in range(2) for j in range(3) for k in range(2)])
        assert float(weighted_cross_entropy(Tensor(z), y, w).data) == pytest.approx(expected, rel=1e-12)

    def test_doubling_weights(self, rng):
        z = rng.standard_normal((1, 3, 2, 2, 2))
        y = rng.integers(0, 3, (1, 2, 2, 2))
        w = np.array([0.3, 1.0, 2.0])
        a, b = Tensor(z.copy(), requires_grad=True), Tensor(z.copy(), requires_grad=True)
        la, lb = weighted_cross_entropy(a, y, w), weighted_cross_entropy(b, y, 2 * w)
        assert float(lb.data) == pytest.approx(2 * float(la.data))
        la.backward()
        lb.backward()
        np.testing.assert_allclose(b.grad, 2 * a.grad, rtol=1e-12)

    def test_gradient(self, rng):
        z = Tensor(rng.standard_normal((1, 6, 2, 2, 3)), requires_grad=True)
        y = rng.integers(0, 6, (1, 2, 2, 3))
        w = rng.uniform(0.1, 3, 6)
        rep = finite_difference_check(lambda t: weighted_cross_entropy(t, y, w), [z], step=1e-5)
        assert rep.passed, rep

    @pytest.mark.parametrize("bad", [-1, 6])
    def test_label_out_of_range(self, bad):
        y = np.zeros((1, 2, 2, 2), int)
        y[0, 0, 0, 0] = bad
        with pytest.raises(DataError):
            weighted_cross_entropy(Tensor(np.zeros((1, 6, 2, 2, 2))), y)


class TestClassWeights:
    def test_equal_frequencies(self):
        w = compute_class_weights([np.repeat(np.arange(6), 10)], 6)
        np.testing.assert_allclose(w, 1.0)

    def test_background_down_weighted(self):
        lab = np.zeros(100, np.uint8)
        lab[:10] = 1
        w = compute_class_weights([lab], 2)
        assert w[0] < w[1]

    def test_invariant_to_total_count(self):
        lab = np.array([0] * 7 + [1] * 2 + [2])
        a = compute_class_weights([lab], 3)
        b = compute_class_weights([np.tile(lab, 13)], 3)
        np.testing.assert_allclose(a, b)

    def test_clipped(self):
        lab = np.zeros(100000, np.uint8)
        lab[0] = 1
        w = compute_class_weights([lab], 2)
        assert 0.1 <= w.min() and w.max() <= 10

    def test_absent_class_falls_back(self, caplog):
        w = compute_class_weights([np.array([0, 0, 0, 1])], 3)
        assert w[2] == 1.0
        assert "absent" in caplog.text

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(1, 500), min_size=6, max_size=6))
    def test_background_never_above_vertebrae(self, counts):
        lab = np.repeat(np.arange(6), counts)
        w = compute_class_weights([lab], 6)
        assert w[0] <= w[1:].min() and np.all(w > 0)


class TestSlidingWindow:
    @pytest.mark.parametrize("size, patch", [(10, 4), (8, 8), (5, 8), (17, 6)])
    def test_tiles_cover_everything(self, size, patch):
        starts = tile_starts(size, patch, max(1, patch // 2))
        covered = np.zeros(max(size, patch), bool)
        for s in starts:
            covered[s:s + patch] = True
        assert covered[:size].all()
        assert all(s + patch <= max(size, patch) for s in starts)

    def test_single_patch_equals_forward(self, rng):
        cfg = SegmenterConfig(depth=2, base_width=2, patch_extents=(8, 8, 12))
        net = SegmentationNet(2, 2, 6, seed=1)
        vol = Volume(rng.standard_normal((8, 8, 12)).astype(np.float32))
        pm = sliding_window_infer(vol, net, cfg)
        z = np.asarray(net(Tensor(vol.data[None, None].copy()), "eval").data, np.float64)
        p = np.exp(z - z.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(pm.probabilities, p[0], atol=1e-12)
        np.testing.assert_array_equal(pm.argmax(), p[0].argmax(axis=0))

    @pytest.mark.parametrize("extents", [(13, 9, 20), (5, 6, 7), (16, 8, 8)])
    def test_probabilities_normalised_with_source_geometry(self, extents, rng):
        cfg = SegmenterConfig(depth=2, base_width=2, patch_extents=(8, 8, 8))
        vol = Volume(rng.standard_normal(extents).astype(np.float32), (1.5, 1.0, 1.0), (3.0, 2.0, 1.0))
        pm = sliding_window_infer(vol, SegmentationNet(2, 2, 6, seed=2), cfg)
        assert pm.probabilities.shape == (6,) + extents
        assert pm.spacing == vol.spacing and pm.origin == vol.origin
        np.testing.assert_allclose(pm.probabilities.sum(axis=0), 1.0, atol=1e-6)

    def test_constant_stub_is_preserved(self):
        class Stub:
            def __call__(self, x, mode):
                z = np.zeros((x.shape[0], 3) + x.shape[2:])
                z[:, 1] = math.log(2.0)  # softmax -> (0.25, 0.5, 0.25)
                return Tensor(z)

        cfg = SegmenterConfig(patch_extents=(8, 8, 8))
        pm = sliding_window_infer(Volume(np.zeros((19, 11, 9), np.float32)), Stub(), cfg)
        np.testing.assert_allclose(pm.probabilities[1], 0.5)
        np.testing.assert_allclose(pm.probabilities[0], 0.25)

    def test_argmax_ties_go_low(self):
        pm = ProbabilityMap(np.full((3, 2, 2, 2), 1 / 3), (1, 1, 1), (0, 0, 0))
        np.testing.assert_array_equal(pm.argmax(), 0)


class TestPostprocess:
    def test_identity_on_clean_solid(self):
        lab = np.zeros((10, 10, 10), np.uint8)
        lab[2:8, 2:8, 2:8] = 3
        np.testing.assert_array_equal(postprocess(lab, 10), lab)

    def test_removes_small_island(self):
        lab = np.zeros((12, 12, 12), np.uint8)
        lab[1:7, 1:7, 1:7] = 1
        lab[10, 10, 8:11] = 1
        out = postprocess(lab, 10)
        assert out[10, 10, 8:11].sum() == 0 and out[1:7, 1:7, 1:7].all()

    def test_fills_single_voxel_cavity(self):
        lab = np.zeros((9, 9, 9), np.uint8)
        lab[2:7, 2:7, 2:7] = 4
        lab[4, 4, 4] = 0
        out = postprocess(lab, 1)
        assert out[4, 4, 4] == 4

    def test_cavity_touching_two_labels_not_filled(self):
        lab = np.zeros((9, 9, 9), np.uint8)
        lab[2:7, 2:7, 2:7] = 1
        lab[2:7, 2:7, 4:7] = 2
        lab[4, 4, 4] = 0
        assert postprocess(lab, 1)[4, 4, 4] == 0

    def test_auto_threshold_is_one_percent(self):
        lab = np.zeros((20, 20, 20), np.uint8)
        lab[0:10, 0:10, 0:10] = 1  # 1000 voxels -> threshold 10
        lab[15, 15, 10:19] = 2  # 9 voxels, removed
        lab[18, 2:12, 18] = 2  # 10 voxels, kept
        out = postprocess(lab, "auto")
        assert out[15, 15, 10:19].sum() == 0 and (out[18, 2:12, 18] == 2).all()

    def test_label_volume_roundtrip(self):
        lab = LabelVolume(np.ones((3, 3, 3), np.uint8), (2.0, 1.0, 1.0), (1.0, 0.0, 0.0))
        out = postprocess(lab, 1)
        assert isinstance(out, LabelVolume) and out.spacing == lab.spacing

    @pytest.mark.parametrize("seed", range(50))
    def test_idempotent(self, seed):
        r = np.random.default_rng(seed)
        raw = ndimage.zoom(r.integers(0, 6, (5, 5, 5)), 2.4, order=0)[:12, :11, :10]
        noisy = np.where(r.random(raw.shape) < 0.1, r.integers(0, 6, raw.shape), raw).astype(np.uint8)
        threshold = "auto" if seed % 2 else int(r.integers(1, 30))
        once = postprocess(noisy, threshold)
        twice = postprocess(once, threshold)
        np.testing.assert_array_equal(once, twice)


TINY = SegmenterConfig(depth=2, base_width=2, patch_extents=(48, 32, 32), binary_epochs=2, multiclass_epochs=1)


@pytest.fixture(scope="module")
def tiny_cases():
    return [gen_phantom(PhantomSpec(seed=s))[:2] for s in (1, 2)]


@pytest.fixture(scope="module")
def binary_run(tiny_cases):
    return train_binary(tiny_cases, TINY, seed=5)


class TestTraining:
    def test_augmented_crop_keeps_alignment(self, tiny_cases):
        vol, lab = augmented_crop(*tiny_cases[0], TINY, seed=3)
        assert vol.extents == lab.extents
        assert lab.data.max() == 5

    def test_binary_history_and_determinism(self, tiny_cases, binary_run):
        assert len(binary_run.history) == 2 and all(np.isfinite(binary_run.history))
        again = train_binary(tiny_cases, TINY, seed=5)
        for k, v in binary_run.checkpoint.tensors.items():
            assert tensor_digest(v) == tensor_digest(again.checkpoint.tensors[k])

    def test_checkpoint_roundtrip(self, binary_run, tmp_path):
        path = tmp_path / "bin.ckpt"
        save_checkpoint(binary_run.checkpoint, path)
        back = load_checkpoint(path)
        assert back.tensors.keys() == binary_run.checkpoint.tensors.keys()
        for k, v in back.tensors.items():
            assert v.tobytes() == binary_run.checkpoint.tensors[k].tobytes()

    def test_all_background_rejected(self):
        vol = Volume(np.zeros((48, 32, 32), np.float32))
        with pytest.raises(TrainingError):
            train_binary([(vol, LabelVolume(np.zeros((48, 32, 32), np.uint8)))], TINY)

    def test_multiclass_step_zero_matches_binary(self, binary_run):
        net = init_from_binary(binary_run.checkpoint)
        expected = {k: tensor_digest(v) for k, v in binary_run.checkpoint.tensors.items()
                    if not k.startswith(HEAD + ".")}
        assert inherited_digests(net) == expected
        assert net.layers[HEAD].kernel.shape[0] == 6

    def test_multiclass_training(self, tiny_cases, binary_run):
        res = train_multiclass(tiny_cases, binary_run.checkpoint, TINY, seed=5)
        assert res.checkpoint.tensors[HEAD + ".kernel"].shape[0] == 6
        assert res.checkpoint.metadata["binary_digests"] == inherited_digests(init_from_binary(binary_run.checkpoint))

    def test_architecture_mismatch(self, tiny_cases, binary_run):
        with pytest.raises(CheckpointError):
            train_multiclass(tiny_cases, binary_run.checkpoint, SegmenterConfig(depth=3, base_width=2))
