"""Tests for median stacking, patch masking, losses, and pseudo-labels."""

import numpy as np
import pytest

from rainstack import (
    FrameSequence,
    LossWeights,
    StackingConfig,
    StackingMask,
    WarpResult,
    backward_warp,
    compute_psnr,
    generate_pseudo_labels,
    make_rainy_sequence,
    patch_mask,
    reconstruction_losses,
    render_mask_overlay,
    stacking_loss,
    synth_translation_flow,
    temporal_loss,
    temporal_median,
    total_loss,
    RainConfig,
)

from conftest import block_texture


def _wr(img, valid=None):
    img = np.asarray(img, dtype=np.float64)
    if valid is None:
        valid = np.ones(img.shape[:2], dtype=np.uint8)
    return WarpResult(img, valid)


class TestConfigTypes:
    def test_stacking_config_defaults(self):
        cfg = StackingConfig()
        assert (cfg.P, cfg.theta, cfg.delta) == (8, 0.8, 0.1)

    @pytest.mark.parametrize(
        "kwargs,msg",
        [({"P": 0}, "P must"), ({"theta": 1.5}, "theta"), ({"delta": -0.1}, "delta")],
    )
    def test_stacking_config_validation(self, kwargs, msg):
        with pytest.raises(ValueError, match=msg):
            StackingConfig(**kwargs)

    def test_mask_validation(self):
        with pytest.raises(ValueError, match="square"):
            StackingMask(np.zeros((2, 3), dtype=np.uint8), 4, 4)
        with pytest.raises(ValueError, match="0 or 1"):
            StackingMask(np.full((2, 2), 3, dtype=np.uint8), 4, 4)
        with pytest.raises(ValueError, match=">= 1"):
            StackingMask(np.zeros((2, 2), dtype=np.uint8), 0, 4)

    def test_mask_acceptance_fraction(self):
        m = StackingMask(np.array([[1, 0], [1, 1]], dtype=np.uint8), 2, 2)
        assert m.acceptance_fraction == pytest.approx(0.75)
        assert m.grid_size == 2

    def test_loss_weights_defaults_and_validation(self):
        w = LossWeights()
        assert w.lambda1 == 0.1 and w.lambda2 == 0.1
        with pytest.raises(ValueError, match="lambda1"):
            LossWeights(lambda1=-1.0)


class TestTemporalMedian:
    def test_empty_aligned_returns_center(self, rng):
        center = rng.uniform(0, 1, (4, 4, 3))
        out = temporal_median(center, [])
        assert np.array_equal(out, center)
        assert out is not center

    def test_identical_frames(self, rng):
        center = rng.uniform(0, 1, (4, 4, 3))
        out = temporal_median(center, [_wr(center)] * 4)
        assert np.array_equal(out, center)

    def test_odd_count_plain_median(self, rng):
        center = rng.uniform(0, 1, (5, 6, 3))
        frames = [rng.uniform(0, 1, (5, 6, 3)) for _ in range(4)]
        out = temporal_median(center, [_wr(f) for f in frames])
        want = np.median(np.stack([center] + frames), axis=0)
        assert np.allclose(out, want, atol=0)

    def test_even_count_average_of_middles(self):
        center = np.full((1, 1, 3), 0.1)
        vals = [0.5, 0.9, 0.3]
        aligned = [_wr(np.full((1, 1, 3), v)) for v in vals]
        out = temporal_median(center, aligned)
        # candidates 0.1 0.3 0.5 0.9 -> (0.3 + 0.5) / 2
        assert np.allclose(out, 0.4, atol=1e-15)

    def test_invalid_pixels_excluded(self):
        center = np.full((2, 2, 3), 0.5)
        good = np.zeros((2, 2, 3))
        valid = np.zeros((2, 2), dtype=np.uint8)
        valid[0, 0] = 1
        out = temporal_median(center, [_wr(good, valid), _wr(good, valid)])
        # at (0,0): candidates {0.5, 0, 0} -> 0; elsewhere only the center
        assert np.allclose(out[0, 0], 0.0)
        assert np.allclose(out[0, 1], 0.5) and np.allclose(out[1, 1], 0.5)

    def test_permutation_invariance(self, rng):
        center = rng.uniform(0, 1, (3, 3, 3))
        frames = [rng.uniform(0, 1, (3, 3, 3)) for _ in range(5)]
        a = temporal_median(center, [_wr(f) for f in frames])
        b = temporal_median(center, [_wr(f) for f in reversed(frames)])
        assert np.array_equal(a, b)

    def test_numba_and_numpy_paths_agree(self, rng, monkeypatch):
        center = rng.uniform(0, 1, (6, 7, 3))
        aligned = [
            _wr(rng.uniform(0, 1, (6, 7, 3)),
                (rng.uniform(size=(6, 7)) < 0.8).astype(np.uint8))
            for _ in range(4)
        ]
        fast = temporal_median(center, aligned)
        monkeypatch.setenv("RAINSTACK_NO_NUMBA", "1")
        slow = temporal_median(center, aligned)
        assert np.array_equal(fast, slow)

    def test_majority_recovery(self, rng):
        # static background, 7 frames, each corrupted by disjoint sparse
        # streaks: the median recovers the background exactly wherever at
        # most 3 of the 7 candidates are corrupted
        background = block_texture(rng, 64, 64)
        corrupted = []
        hit_count = np.zeros((64, 64), dtype=int)
        for k in range(7):
            frame = background.copy()
            hits = rng.uniform(size=(64, 64)) < 0.02
            frame[hits] = 1.0
            hit_count += hits
            corrupted.append(frame)
        center = corrupted[3]
        aligned = [_wr(f) for i, f in enumerate(corrupted) if i != 3]
        out = temporal_median(center, aligned)
        recoverable = hit_count <= 3
        assert recoverable.mean() > 0.99
        assert np.array_equal(out[recoverable], background[recoverable])

    def test_rejects_non_warpresult(self, rng):
        with pytest.raises(TypeError, match="WarpResult"):
            temporal_median(rng.uniform(0, 1, (2, 2, 3)), [np.zeros((2, 2, 3))])

    def test_rejects_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="expected"):
            temporal_median(rng.uniform(0, 1, (2, 2, 3)), [_wr(np.zeros((3, 2, 3)))])


class TestPatchMask:
    def test_identical_images_all_accepted(self, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        mask = patch_mask(img, img, StackingConfig(P=4))
        assert mask.acceptance_fraction == 1.0
        assert (mask.patch_h, mask.patch_w) == (4, 4)

    def test_changed_half_rejected(self):
        center = np.zeros((16, 16, 3))
        median = center.copy()
        median[:8, :, :] = 0.5  # top half differs by 0.5 > delta
        mask = patch_mask(median, center, StackingConfig(P=4, theta=0.8, delta=0.1))
        assert np.all(mask.accept[:2, :] == 0)
        assert np.all(mask.accept[2:, :] == 1)

    def test_delta_boundary_inclusive(self):
        center = np.zeros((8, 8, 3))
        median = np.full((8, 8, 3), 0.125)
        cfg = StackingConfig(P=2, theta=1.0, delta=0.125)
        assert patch_mask(median, center, cfg).acceptance_fraction == 1.0
        cfg = StackingConfig(P=2, theta=1.0, delta=0.1249)
        assert patch_mask(median, center, cfg).acceptance_fraction == 0.0

    def test_theta_boundary_inclusive(self):
        # one 4x4 patch with exactly 12/16 unchanged pixels at theta = 0.75
        center = np.zeros((4, 4, 3))
        median = np.zeros((4, 4, 3))
        median[0, :, 0] = 0.5  # 4 changed pixels
        cfg = StackingConfig(P=1, theta=0.75, delta=0.1)
        assert patch_mask(median, center, cfg).accept[0, 0] == 1
        median[1, 0, 0] = 0.5  # 5 changed: fraction 11/16 < 0.75
        assert patch_mask(median, center, cfg).accept[0, 0] == 0

    def test_max_over_channels(self):
        # a single-channel excursion beyond delta marks the pixel changed
        center = np.zeros((4, 4, 3))
        median = np.zeros((4, 4, 3))
        median[:, :, 2] = 0.2
        cfg = StackingConfig(P=1, theta=1.0, delta=0.1)
        assert patch_mask(median, center, cfg).accept[0, 0] == 0

    def test_strict_settings_identical_images(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        cfg = StackingConfig(P=2, theta=1.0, delta=0.0)
        assert patch_mask(img, img, cfg).acceptance_fraction == 1.0

    def test_non_divisible_dims_pad_cells_accepted(self):
        # 10x10 with P=8: ceil size 2, so only a 5x5 block of cells holds
        # real pixels; with everything changed those reject, while the
        # pad-only cells are vacuously accepted
        center = np.zeros((10, 10, 3))
        median = np.ones((10, 10, 3))
        mask = patch_mask(median, center, StackingConfig(P=8, theta=0.5, delta=0.1))
        assert (mask.patch_h, mask.patch_w) == (2, 2)
        assert np.all(mask.accept[:5, :5] == 0)
        assert np.all(mask.accept[5:, :] == 1)
        assert np.all(mask.accept[:, 5:] == 1)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            patch_mask(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)), StackingConfig())


class TestMaskOverlay:
    def test_accepted_patches_untouched(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        mask = StackingMask(np.ones((2, 2), dtype=np.uint8), 4, 4)
        assert np.array_equal(render_mask_overlay(mask, img), img)

    def test_rejected_patches_tinted(self):
        img = np.full((8, 8, 3), 0.4)
        grid = np.ones((2, 2), dtype=np.uint8)
        grid[0, 0] = 0
        out = render_mask_overlay(StackingMask(grid, 4, 4), img)
        assert np.allclose(out[:4, :4, 0], 0.7)  # 0.5*0.4 + 0.5
        assert np.allclose(out[:4, :4, 1:], 0.2)
        assert np.allclose(out[4:, :, :], 0.4)

    def test_grid_mismatch_raises(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        with pytest.raises(ValueError, match="does not tile"):
            render_mask_overlay(StackingMask(np.ones((2, 2), dtype=np.uint8), 3, 4), img)


class TestStackingLoss:
    def test_zero_when_equal(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        mask = StackingMask(np.ones((2, 2), dtype=np.uint8), 4, 4)
        assert stacking_loss(img, img, mask) == 0.0

    def test_all_rejected_is_zero(self, rng):
        a = rng.uniform(0, 1, (8, 8, 3))
        b = rng.uniform(0, 1, (8, 8, 3))
        mask = StackingMask(np.zeros((2, 2), dtype=np.uint8), 4, 4)
        assert stacking_loss(a, b, mask) == 0.0

    def test_uniform_difference_single_patch(self):
        # one accepted 8x8x3 patch, uniform difference 0.1 -> 8*8*3*0.1
        derained = np.full((8, 8, 3), 0.6)
        median = np.full((8, 8, 3), 0.5)
        mask = StackingMask(np.ones((1, 1), dtype=np.uint8), 8, 8)
        assert stacking_loss(derained, median, mask) == pytest.approx(19.2, abs=1e-12)

    def test_counts_only_accepted_patches(self):
        derained = np.full((8, 8, 3), 0.6)
        median = np.full((8, 8, 3), 0.5)
        grid = np.zeros((2, 2), dtype=np.uint8)
        grid[0, 0] = 1
        mask = StackingMask(grid, 4, 4)
        # one accepted 4x4x3 cell: 4*4*3*0.1
        assert stacking_loss(derained, median, mask) == pytest.approx(4.8, abs=1e-12)

    def test_monotone_in_residual(self, rng):
        median = rng.uniform(0.2, 0.8, (8, 8, 3))
        mask = StackingMask(np.ones((2, 2), dtype=np.uint8), 4, 4)
        near = np.clip(median + 0.01, 0, 1)
        far = np.clip(median + 0.1, 0, 1)
        assert stacking_loss(near, median, mask) < stacking_loss(far, median, mask)

    def test_grid_mismatch(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        with pytest.raises(ValueError, match="does not tile"):
            stacking_loss(img, img, StackingMask(np.ones((2, 2), dtype=np.uint8), 5, 4))


class TestReconstructionLosses:
    def test_all_equal(self, rng):
        img = rng.uniform(0, 1, (4, 4, 3))
        assert reconstruction_losses(img, img, img) == (0.0, 0.0)

    def test_uniform_difference(self):
        truth = np.full((4, 4, 3), 0.5)
        dual = np.full((4, 4, 3), 0.51)
        l_rec, l_spa = reconstruction_losses(dual, truth, truth)
        assert l_rec == pytest.approx(0.48, abs=1e-12)
        assert l_spa == 0.0

    def test_spatial_equals_truth(self, rng):
        truth = rng.uniform(0.2, 0.8, (4, 4, 3))
        dual = np.clip(truth + 0.05, 0, 1)
        l_rec, l_spa = reconstruction_losses(dual, truth, truth)
        assert l_spa == 0.0 and l_rec > 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            reconstruction_losses(
                np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), np.zeros((5, 4, 3))
            )


class TestTemporalLoss:
    def test_static_scene_zero(self, rng):
        img = rng.uniform(0, 1, (4, 4, 3))
        zero = synth_translation_flow(0, 0, 4, 4)
        assert temporal_loss(img, [img, img], [zero, zero]) == 0.0

    def test_uniform_difference(self):
        center = np.full((2, 2, 3), 0.7)
        neighbor = np.full((2, 2, 3), 0.5)
        zero = synth_translation_flow(0, 0, 2, 2)
        # one neighbor, zero flow, uniform difference 0.2: 2*2*3*0.2
        assert temporal_loss(center, [neighbor], [zero]) == pytest.approx(2.4, abs=1e-12)

    def test_mean_over_neighbors(self):
        center = np.full((2, 2, 3), 0.7)
        same = np.full((2, 2, 3), 0.7)
        far = np.full((2, 2, 3), 0.5)
        zero = synth_translation_flow(0, 0, 2, 2)
        loss = temporal_loss(center, [same, far], [zero, zero])
        assert loss == pytest.approx(1.2, abs=1e-12)

    def test_invalid_pixels_excluded(self, rng):
        center = rng.uniform(0, 1, (4, 4, 3))
        neighbor = rng.uniform(0, 1, (4, 4, 3))
        off = synth_translation_flow(100.0, 0.0, 4, 4)  # fully out of bounds
        assert temporal_loss(center, [neighbor], [off]) == 0.0

    def test_empty_neighbors(self, rng):
        with pytest.raises(ValueError, match="at least one neighbor"):
            temporal_loss(rng.uniform(0, 1, (2, 2, 3)), [], [])

    def test_length_mismatch(self, rng):
        img = rng.uniform(0, 1, (2, 2, 3))
        with pytest.raises(ValueError, match="length mismatch"):
            temporal_loss(img, [img], [])


class TestTotalLoss:
    def test_paired_arithmetic(self):
        w = LossWeights(lambda1=0.1, lambda2=0.1)
        comps = {"l_rec": 1.0, "l_spa": 2.0, "l_tem": 3.0}
        assert total_loss("paired", comps, w) == pytest.approx(3.3, abs=1e-15)

    def test_unpaired_arithmetic(self):
        w = LossWeights(lambda1=0.1, lambda2=0.1)
        comps = {"l_sta": 10.0, "l_spa": 2.0, "l_tem": 3.0}
        assert total_loss("unpaired", comps, w) == pytest.approx(3.3, abs=1e-15)

    def test_all_zero(self):
        w = LossWeights()
        assert total_loss("paired", {"l_rec": 0, "l_spa": 0, "l_tem": 0}, w) == 0.0

    def test_linear_in_weights(self, rng):
        comps = {k: float(rng.uniform(0, 5)) for k in ("l_sta", "l_spa", "l_tem")}
        base = total_loss("unpaired", comps, LossWeights(lambda1=0.0, lambda2=0.0))
        shifted = total_loss("unpaired", comps, LossWeights(lambda1=1.0, lambda2=2.0))
        want = base + comps["l_sta"] + 2.0 * comps["l_tem"]
        assert shifted == pytest.approx(want, rel=1e-12)

    def test_missing_component(self):
        with pytest.raises(ValueError, match="missing loss components"):
            total_loss("paired", {"l_rec": 1.0, "l_spa": 2.0}, LossWeights())

    def test_bad_mode(self):
        with pytest.raises(ValueError, match="paired"):
            total_loss("both", {}, LossWeights())

    def test_extra_components_ignored(self):
        comps = {"l_rec": 1.0, "l_spa": 1.0, "l_tem": 1.0, "l_sta": 99.0}
        assert total_loss("paired", comps, LossWeights()) == pytest.approx(2.1)


class TestGeneratePseudoLabels:
    def test_identical_frames_full_acceptance(self, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        seq = FrameSequence(tuple([img] * 7), 3)
        flows = [synth_translation_flow(0, 0, 16, 16) for _ in range(6)]
        median, mask = generate_pseudo_labels(seq, flows, StackingConfig(P=4))
        assert np.array_equal(median, img)
        assert mask.acceptance_fraction == 1.0

    def test_denoises_translating_sequence(self, rng):
        base = block_texture(rng, 64, 64)
        rainy, clean, flows = make_rainy_sequence(
            base, 7, (1.0, 0.0), RainConfig(density=0.02, intensity=0.4, seed=3)
        )
        median, mask = generate_pseudo_labels(rainy, flows, StackingConfig())
        before = compute_psnr(rainy.center, clean.center)
        after = compute_psnr(median, clean.center)
        assert after - before >= 10.0
        assert mask.acceptance_fraction >= 0.9

    def test_wrong_flows_drop_acceptance(self, rng):
        # feeding sign-flipped flows misaligns every neighbor, so the median
        # disagrees with the center over most of the image
        base = block_texture(rng, 64, 64, block=4)
        rainy, _, flows = make_rainy_sequence(
            base, 7, (2.0, 0.0), RainConfig(density=0.02, seed=7)
        )
        wrong = [synth_translation_flow(-float(f.u[0, 0]), 0.0, 64, 64) for f in flows]
        _, good_mask = generate_pseudo_labels(rainy, flows, StackingConfig())
        _, bad_mask = generate_pseudo_labels(rainy, wrong, StackingConfig())
        assert bad_mask.acceptance_fraction < 0.5
        assert good_mask.acceptance_fraction > bad_mask.acceptance_fraction

    def test_flow_count_mismatch(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        seq = FrameSequence(tuple([img] * 3), 1)
        with pytest.raises(ValueError, match="one flow per non-center frame"):
            generate_pseudo_labels(seq, [synth_translation_flow(0, 0, 8, 8)],
                                   StackingConfig())

    def test_flow_type_check(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        seq = FrameSequence(tuple([img] * 3), 1)
        with pytest.raises(TypeError, match="FlowField"):
            generate_pseudo_labels(seq, [None, None], StackingConfig())

    def test_median_clipped_to_unit_range(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        seq = FrameSequence(tuple([img] * 3), 1)
        flows = [synth_translation_flow(0, 0, 8, 8)] * 2
        median, _ = generate_pseudo_labels(seq, flows, StackingConfig(P=2))
        assert median.min() >= 0.0 and median.max() <= 1.0
