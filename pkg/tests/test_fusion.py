import numpy as np
import pytest

from depthsr.fusion import (
    FusionState,
    OrderMatch,
    PipelineConfig,
    aggregate,
    default_fuse_weights,
    encode_depth,
    encode_rgb,
    filter_bank,
    moma_step,
    order_matches,
    reconstruct,
    run_pipeline,
)
from depthsr.grid import DepthMap, FeatureMap, bicubic_resample, sigmoid
from depthsr.losses import add_noise
from depthsr.scenes import SceneSpec, render_scene, render_shifted_pair


def gray_image(plane):
    return FeatureMap(np.stack([plane] * 3))


class TestPipelineConfig:
    def test_defaults_follow_protocol(self):
        cfg = PipelineConfig()
        assert cfg.moma_iters == 3
        assert cfg.channels == 8
        assert cfg.k == 4
        assert cfg.alpha_loss == 0.001
        assert cfg.orders == ("zero", "first", "second")

    def test_tiny_profile(self):
        cfg = PipelineConfig.tiny(scale=8)
        assert cfg.channels == 2
        assert cfg.moma_iters == 2

    def test_scale_restricted(self):
        with pytest.raises(ValueError):
            PipelineConfig(scale=3)

    def test_weight_shapes_validated(self):
        with pytest.raises(ValueError):
            PipelineConfig(w_fuse=np.zeros((8, 8)))
        with pytest.raises(ValueError):
            PipelineConfig(w_head=np.zeros((4, 8)))

    def test_orders_canonicalized(self):
        cfg = PipelineConfig(orders=("second", "zero"))
        assert cfg.orders == ("zero", "second")
        with pytest.raises(ValueError):
            PipelineConfig(orders=("zeroth",))


class TestEncoders:
    def test_constant_image_gives_flat_features(self):
        img = gray_image(np.full((16, 16), 0.5))
        f = encode_rgb(img, 4, 8)
        assert f.shape == (8, 4, 4)
        np.testing.assert_allclose(f.data, 0.0, atol=1e-12)

    def test_single_pixel_output(self):
        img = gray_image(np.random.default_rng(0).uniform(size=(4, 4)))
        f = encode_rgb(img, 4, 3)
        assert f.shape == (3, 1, 1)

    def test_step_edge_peaks_sobel_x(self):
        plane = np.zeros((8, 8))
        plane[:, 4:] = 1.0
        img = gray_image(plane)
        f = encode_rgb(img, 1, 4)
        sobel_x = np.abs(f.data[2])
        peak_col = np.argmax(sobel_x.mean(axis=0))
        assert peak_col in (3, 4)

    def test_indivisible_dims_rejected(self):
        img = gray_image(np.zeros((10, 10)))
        with pytest.raises(ValueError):
            encode_rgb(img, 4, 8)

    def test_constant_depth_zero_features(self):
        d = DepthMap.all_valid(np.full((6, 6), 2.0))
        f = encode_depth(d, 4)
        np.testing.assert_allclose(f.data, 0.0, atol=1e-12)

    def test_ramp_depth_constant_sobel_interior(self):
        y, x = np.mgrid[0:8, 0:8].astype(np.float64)
        d = DepthMap.all_valid(2.0 + 0.1 * x)
        f = encode_depth(d, 4)
        sobel_x = f.data[2]
        interior = sobel_x[1:-1, 1:-1]
        assert interior.std() <= 1e-8 * max(1.0, abs(interior.mean()))

    def test_bank_size_limit(self):
        with pytest.raises(ValueError):
            filter_bank(9)


class TestAggregate:
    def test_all_orders_disabled_identity_skip(self):
        rng = np.random.default_rng(1)
        cfg = PipelineConfig(scale=4, channels=4, orders=())
        f_d = FeatureMap(rng.normal(size=(4, 5, 5)))
        f_r = FeatureMap(rng.normal(size=(4, 5, 5)))
        out = aggregate(f_d, f_r, {}, cfg)
        np.testing.assert_array_equal(out.data, f_d.data)

    def test_zero_prior_gates_at_half(self):
        rng = np.random.default_rng(2)
        c = 4
        cfg = PipelineConfig(
            scale=4,
            channels=c,
            orders=("first",),
            detector=False,
            w_fuse=np.concatenate([np.zeros((c, 2 * c)), np.eye(c), np.zeros((c, c))], axis=1),
        )
        f_d = FeatureMap(rng.normal(size=(c, 4, 4)))
        f_r = FeatureMap(rng.normal(size=(c, 4, 4)))
        matched = FeatureMap(rng.normal(size=(c, 4, 4)))
        matches = {"first": OrderMatch(matched, FeatureMap(np.zeros((c, 4, 4))))}
        out = aggregate(f_d, f_r, matches, cfg)
        np.testing.assert_allclose(out.data, 0.5 * matched.data, atol=1e-12)

    def test_gates_are_sigmoid_of_prior(self):
        rng = np.random.default_rng(3)
        c = 2
        cfg = PipelineConfig(
            scale=4,
            channels=c,
            orders=("second",),
            detector=False,
            w_fuse=np.concatenate([np.zeros((c, 3 * c)), np.eye(c)], axis=1),
        )
        f_d = FeatureMap(rng.normal(size=(c, 3, 3)))
        f_r = FeatureMap(rng.normal(size=(c, 3, 3)))
        matched = FeatureMap(rng.normal(size=(c, 3, 3)))
        prior = FeatureMap(rng.normal(size=(c, 3, 3)))
        out = aggregate(f_d, f_r, {"second": OrderMatch(matched, prior)}, cfg)
        np.testing.assert_allclose(out.data, sigmoid(prior.data) * matched.data, atol=1e-12)

    def test_one_step_beats_addition_fusion_on_shifted_scene(self):
        d_lr, rgb = render_shifted_pair("boxes", 48, 48, 3, 4)
        noisy = add_noise(d_lr, 0.07, seed=3)
        c = 8
        f_r = encode_rgb(rgb, 1, c)
        f_d0 = encode_depth(noisy, c)
        reference = encode_depth(d_lr, c)
        w_fuse = np.concatenate(
            [0.5 * np.eye(c), 0.5 * np.eye(c), np.zeros((c, 2 * c))], axis=1
        )
        cfg = PipelineConfig(
            scale=4, channels=c, moma_iters=1, orders=("zero",),
            detector=False, w_fuse=w_fuse,
        )
        fused = aggregate(f_d0, f_r, order_matches(f_r, f_d0, cfg), cfg)
        addition = 0.5 * (f_d0.data + f_r.data)
        d_matched = np.abs(fused.data - reference.data).mean()
        d_addition = np.abs(addition - reference.data).mean()
        assert d_matched < d_addition


class TestMomaStep:
    def test_shapes_preserved_and_iteration_bumped(self):
        d_lr, rgb = render_shifted_pair("boxes", 16, 16, 1, 1)
        cfg = PipelineConfig.tiny(scale=4)
        state = FusionState(encode_depth(d_lr, cfg.channels), encode_rgb(rgb, 1, cfg.channels), 0)
        out = moma_step(state, cfg)
        assert out.f_d.shape == state.f_d.shape
        assert out.iteration == 1
        np.testing.assert_array_equal(out.f_r.data, state.f_r.data)

    def test_feature_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            FusionState(
                FeatureMap(np.zeros((2, 4, 4))), FeatureMap(np.zeros((2, 4, 5))), 0
            )


class TestReconstruct:
    def test_zero_head_reproduces_bicubic(self):
        rng = np.random.default_rng(4)
        d_lr = DepthMap.all_valid(2.0 + rng.uniform(size=(6, 6)))
        cfg = PipelineConfig(scale=4, channels=2)
        f_d = FeatureMap(rng.normal(size=(2, 6, 6)))
        out = reconstruct(f_d, d_lr, cfg)
        base = bicubic_resample(d_lr, 4.0)
        np.testing.assert_array_equal(out.depth, base.depth)
        np.testing.assert_array_equal(out.valid, base.valid)

    def test_constant_features_give_periodic_residual(self):
        d_lr = DepthMap.all_valid(np.full((4, 4), 2.0))
        cfg = PipelineConfig(scale=4, channels=2)
        rng = np.random.default_rng(5)
        cfg.w_head = rng.normal(size=(16, 2))
        f_d = FeatureMap(np.ones((2, 4, 4)))
        out = reconstruct(f_d, d_lr, cfg)
        residual = out.depth - 2.0
        tile = residual[:4, :4]
        np.testing.assert_allclose(residual, np.tile(tile, (4, 4)), atol=1e-12)

    def test_output_dims_scale_up(self):
        d_lr = DepthMap.all_valid(np.full((3, 5), 2.0))
        cfg = PipelineConfig(scale=8, channels=2)
        out = reconstruct(FeatureMap(np.zeros((2, 3, 5))), d_lr, cfg)
        assert out.depth.shape == (24, 40)


class TestRunPipeline:
    def test_size_mismatch_rejected(self):
        cfg = PipelineConfig.tiny(scale=4)
        rgb = gray_image(np.zeros((16, 16)))
        d_lr = DepthMap.all_valid(np.full((5, 4), 2.0))
        with pytest.raises(ValueError):
            run_pipeline(rgb, d_lr, cfg)

    def test_deterministic_rerun(self):
        spec = SceneSpec(width=32, height=32, scale=4, noise_sigma=0.0)
        scene = render_scene(spec)
        cfg = PipelineConfig.tiny(scale=4)
        a = run_pipeline(scene.rgb, scene.d_lr, cfg)
        b = run_pipeline(scene.rgb, scene.d_lr, cfg)
        np.testing.assert_array_equal(a.depth, b.depth)

    def test_zero_head_pipeline_is_bicubic(self):
        spec = SceneSpec(width=32, height=32, scale=4, noise_sigma=0.0)
        scene = render_scene(spec)
        cfg = PipelineConfig.tiny(scale=4)
        out = run_pipeline(scene.rgb, scene.d_lr, cfg)
        base = bicubic_resample(scene.d_lr, 4.0)
        np.testing.assert_array_equal(out.depth, base.depth)

    def test_disabled_orders_change_nothing_with_default_fuse(self):
        # Default fuse weights are the identity skip, so matched blocks are
        # multiplied by zero and any order subset yields the same output.
        spec = SceneSpec(width=32, height=32, scale=4, noise_sigma=0.0)
        scene = render_scene(spec)
        full = PipelineConfig.tiny(scale=4)
        none = PipelineConfig.tiny(scale=4, orders=())
        np.testing.assert_array_equal(
            run_pipeline(scene.rgb, scene.d_lr, full).depth,
            run_pipeline(scene.rgb, scene.d_lr, none).depth,
        )

    def test_fused_blocks_reach_output_with_mixing_weights(self):
        spec = SceneSpec(width=32, height=32, scale=4, noise_sigma=0.0)
        scene = render_scene(spec)
        cfg = PipelineConfig.tiny(scale=4)
        c = cfg.channels
        cfg.w_fuse = np.concatenate([0.5 * np.eye(c), 0.5 * np.eye(c), np.zeros((c, 2 * c))], axis=1)
        rng = np.random.default_rng(6)
        cfg.w_head = 0.01 * rng.normal(size=(16, c))
        mixed = run_pipeline(scene.rgb, scene.d_lr, cfg)
        cfg_skip = PipelineConfig.tiny(scale=4)
        cfg_skip.w_head = cfg.w_head
        skip = run_pipeline(scene.rgb, scene.d_lr, cfg_skip)
        assert np.any(mixed.depth != skip.depth)
