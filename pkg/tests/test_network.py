import numpy as np
import pytest

from transit_nlos import autodiff as ad
from transit_nlos.autodiff import Tensor
from transit_nlos.network import (
    FeatureMap,
    ModelConfig,
    PositionalEncoding,
    TransitParams,
    attention,
    compress,
    encode_positions,
    forward,
    fuse,
    fused_features,
    infer,
    normalize_cube,
    output_head,
    vit_block,
)
from conftest import numeric_gradient

TINY = ModelConfig(
    scan_res=4, time_bins=32, compress_dim=8, token_dim=16, blocks=2, heads=2, patch_out=2
)


def tiny_params(seed=0):
    return TransitParams.init(TINY, seed=seed)


def rand_cube(rng, cfg=TINY):
    return rng.uniform(0.0, 5.0, (cfg.scan_res, cfg.scan_res, cfg.time_bins))


class TestModelConfig:
    def test_defaults_match_published_shape(self):
        cfg = ModelConfig()
        assert cfg.scan_res == 16
        assert cfg.compress_dim == 32
        assert cfg.blocks == 8
        assert cfg.heads == 8
        assert cfg.output_side == 64

    def test_invariants(self):
        with pytest.raises(ValueError):
            ModelConfig(token_dim=130, heads=8)
        with pytest.raises(ValueError):
            ModelConfig(time_bins=16, compress_dim=32)


class TestPositionalEncoding:
    def test_entries_bounded(self):
        pe = PositionalEncoding(8, 32)
        assert pe.spatial.shape == (64, 32)
        assert np.abs(pe.spatial).max() <= 1.0
        assert np.abs(pe.temporal(12345)).max() <= 1.0

    def test_corner_rows_distinct(self):
        pe = PositionalEncoding(8, 32)
        assert not np.allclose(pe.spatial[0], pe.spatial[-1])

    def test_temporal_unbounded_frames(self):
        pe = PositionalEncoding(4, 16)
        assert pe.temporal(10_000).shape == (16,)
        with pytest.raises(ValueError):
            pe.temporal(-1)


class TestCompress:
    def test_zero_weights_give_zero_features(self):
        params = tiny_params()
        params.tensors["compress.w"].data[:] = 0.0
        params.tensors["compress.b"].data[:] = 0.0
        fm = compress(rand_cube(np.random.default_rng(0)), params)
        assert not fm.tokens.data.any()

    def test_identity_weights_pass_histograms_through(self):
        cfg = ModelConfig(scan_res=4, time_bins=8, compress_dim=8, token_dim=16, blocks=1, heads=2)
        params = TransitParams.init(cfg)
        params.tensors["compress.w"].data[:] = np.eye(8)
        params.tensors["compress.b"].data[:] = 0.0
        cube = np.random.default_rng(1).uniform(0, 1, (4, 4, 8))
        fm = compress(cube, params)
        np.testing.assert_allclose(fm.tokens.data, cube.reshape(16, 8), rtol=1e-12)

    def test_published_shape_contract(self):
        # 16x16x512 histograms compress to 256 tokens of 32 features
        params = TransitParams.init(ModelConfig())
        cube = np.zeros((16, 16, 512))
        assert compress(cube, params).tokens.shape == (256, 32)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            compress(np.zeros((3, 3, 32)), tiny_params())


class TestFuse:
    def test_identical_frames_zero_difference(self):
        t = FeatureMap(Tensor(np.random.default_rng(2).standard_normal((16, 8))), 1)
        fused = fuse(t, t)
        assert not fused.tokens.data[:, 8:].any()

    def test_zero_previous_duplicates_current(self):
        cur = FeatureMap(Tensor(np.random.default_rng(3).standard_normal((16, 8))), 1)
        prev = FeatureMap(Tensor(np.zeros((16, 8))), 0)
        fused = fuse(cur, prev)
        np.testing.assert_array_equal(fused.tokens.data[:, :8], cur.tokens.data)
        np.testing.assert_array_equal(fused.tokens.data[:, 8:], cur.tokens.data)

    def test_halves_recompute_exactly(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal((16, 8)), rng.standard_normal((16, 8))
        fused = fuse(FeatureMap(Tensor(a), 1), FeatureMap(Tensor(b), 0))
        np.testing.assert_array_equal(fused.tokens.data[:, :8], a)
        np.testing.assert_array_equal(fused.tokens.data[:, 8:], a - b)

    def test_first_frame_convention(self):
        cur = FeatureMap(Tensor(np.ones((16, 8))), 0)
        fused = fuse(cur, None)
        assert not fused.tokens.data[:, 8:].any()


class TestEncodePositions:
    def test_additive_structure(self):
        params = tiny_params()
        rng = np.random.default_rng(5)
        fused = FeatureMap(Tensor(rng.standard_normal((16, 16))), 0)
        tokens = encode_positions(fused, params, frame=3)
        proj = fused.tokens.data @ params.tensors["proj.w"].data + params.tensors["proj.b"].data
        pe = params.encoding.spatial + params.encoding.temporal(3)[None, :]
        np.testing.assert_allclose(tokens.data, proj + pe, rtol=1e-12)

    def test_frames_differ_by_constant_row(self):
        params = tiny_params()
        fused = FeatureMap(Tensor(np.zeros((16, 16))), 0)
        t0 = encode_positions(fused, params, frame=0).data
        t1 = encode_positions(fused, params, frame=1).data
        diff = t1 - t0
        np.testing.assert_allclose(diff, np.tile(diff[0], (16, 1)), atol=1e-12)


class TestAttention:
    def test_single_token_softmax_is_identity_weight(self):
        cfg = ModelConfig(scan_res=1, time_bins=8, compress_dim=4, token_dim=8, blocks=1, heads=2, patch_out=2)
        params = TransitParams.init(cfg)
        x = Tensor(np.random.default_rng(6).standard_normal((1, 8)))
        out = attention(x, params, "block0")
        # one token: attention output is its own value projection
        t = params.tensors
        qkv = x.data @ t["block0.qkv.w"].data + t["block0.qkv.b"].data
        v = qkv[:, 16:24]
        expected = v @ t["block0.out.w"].data + t["block0.out.b"].data
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)

    def test_equal_tokens_give_equal_outputs(self):
        params = tiny_params()
        x = Tensor(np.tile(np.random.default_rng(7).standard_normal(16), (16, 1)))
        out = attention(x, params, "block0").data
        np.testing.assert_allclose(out, np.tile(out[0], (16, 1)), atol=1e-12)

    def test_matches_hand_rolled_oracle(self):
        # independent step-by-step recomputation with loops, 4 tokens
        cfg = ModelConfig(scan_res=2, time_bins=8, compress_dim=4, token_dim=8, blocks=1, heads=2, patch_out=2)
        params = TransitParams.init(cfg, seed=11)
        rng = np.random.default_rng(8)
        x = rng.standard_normal((4, 8))
        out = attention(Tensor(x), params, "block0").data

        t = params.tensors
        qkv = x @ t["block0.qkv.w"].data + t["block0.qkv.b"].data
        q, k, v = qkv[:, :8], qkv[:, 8:16], qkv[:, 16:]
        dh = 8 // 2
        ctx = np.zeros((4, 8))
        for head in range(2):
            sl = slice(head * dh, (head + 1) * dh)
            qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
            for i in range(4):
                scores = np.array([qh[i] @ kh[j] / np.sqrt(dh) for j in range(4)])
                w = np.exp(scores - scores.max())
                w = w / w.sum()
                ctx[i, sl] = sum(w[j] * vh[j] for j in range(4))
        expected = ctx @ t["block0.out.w"].data + t["block0.out.b"].data
        np.testing.assert_allclose(out, expected, atol=1e-10)


class TestVitBlock:
    def test_zeroed_projections_make_identity(self):
        params = tiny_params()
        for k in range(TINY.blocks):
            params.tensors[f"block{k}.out.w"].data[:] = 0.0
            params.tensors[f"block{k}.out.b"].data[:] = 0.0
            params.tensors[f"block{k}.mlp2.w"].data[:] = 0.0
            params.tensors[f"block{k}.mlp2.b"].data[:] = 0.0
        x = np.random.default_rng(9).standard_normal((16, 16))
        out = vit_block(Tensor(x), params, 0).data
        np.testing.assert_array_equal(out, x)

    def test_shape_preserved_and_finite(self):
        params = tiny_params()
        x = Tensor(np.random.default_rng(10).standard_normal((16, 16)) * 5)
        out = vit_block(x, params, 1)
        assert out.shape == (16, 16)
        assert np.all(np.isfinite(out.data))


class TestOutputHead:
    def test_zero_params_give_half_gray(self):
        params = tiny_params()
        params.tensors["head.w"].data[:] = 0.0
        params.tensors["head.b"].data[:] = 0.0
        img = output_head(Tensor(np.random.default_rng(11).standard_normal((16, 16))), params)
        np.testing.assert_array_equal(img.data, np.full((8, 8), 0.5))

    def test_published_output_side(self):
        params = TransitParams.init(ModelConfig())
        img = output_head(Tensor(np.zeros((256, 128))), params)
        assert img.shape == (64, 64)

    def test_patch_tiling_jacobian_sparsity(self):
        params = tiny_params()
        tokens = np.random.default_rng(12).standard_normal((16, 16))
        base = output_head(Tensor(tokens), params).data
        ti, tj = 2, 1  # token at grid (2, 1)
        bumped = tokens.copy()
        bumped[ti * 4 + tj] += 1.0
        out = output_head(Tensor(bumped), params).data
        changed = np.argwhere(out != base)
        p = TINY.patch_out
        assert changed.size > 0
        for r, c in changed:
            assert ti * p <= r < (ti + 1) * p
            assert tj * p <= c < (tj + 1) * p


class TestForward:
    def test_single_frame_runs_with_self_fusion(self):
        params = tiny_params()
        imgs = forward([rand_cube(np.random.default_rng(13))], params)
        assert len(imgs) == 1
        assert imgs[0].shape == (8, 8)

    def test_outputs_in_unit_range_and_finite(self):
        params = tiny_params()
        rng = np.random.default_rng(14)
        imgs = forward([rand_cube(rng) for _ in range(3)], params)
        for img in imgs:
            assert np.all(np.isfinite(img.data))
            assert img.data.min() > 0.0 and img.data.max() < 1.0

    def test_causality_under_tail_permutation(self):
        params = tiny_params()
        rng = np.random.default_rng(15)
        cubes = [rand_cube(rng) for _ in range(4)]
        a = forward(cubes, params)
        permuted = [cubes[0], cubes[1], cubes[3], cubes[2]]
        b = forward(permuted, params)
        for f in range(2):
            np.testing.assert_array_equal(a[f].data, b[f].data)

    def test_normalization_by_global_max(self):
        assert normalize_cube(np.full((2, 2, 4), 8.0)).max() == 1.0
        assert not normalize_cube(np.zeros((2, 2, 4))).any()

    def test_infer_matches_forward(self):
        params = tiny_params()
        cubes = [rand_cube(np.random.default_rng(16)) for _ in range(2)]
        a = [t.data for t in forward(cubes, params)]
        b = infer(cubes, params)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


class TestGradients:
    def test_parameter_gradients_match_finite_differences(self):
        # spot-check a slice of every parameter group on the tiny model
        params = tiny_params(seed=21)
        rng = np.random.default_rng(17)
        cubes = [rand_cube(rng) for _ in range(2)]
        target = rng.uniform(0, 1, (2, 8, 8))

        def loss_value() -> float:
            imgs = forward(cubes, params)
            total = ad.tensor_mean(
                ad.concat([ad.power(ad.sub(img, t), 2.0).reshape(1, 64) for img, t in zip(imgs, target)], 0)
            )
            return total

        loss = loss_value()
        loss.backward()
        rng_pick = np.random.default_rng(18)
        for name, tensor in params.tensors.items():
            flat = tensor.data.ravel()
            idx = rng_pick.integers(0, flat.size, size=min(3, flat.size))
            for i in idx:
                h = 1e-5 * max(1.0, abs(flat[i]))
                orig = flat[i]
                flat[i] = orig + h
                up = float(loss_value().data)
                flat[i] = orig - h
                down = float(loss_value().data)
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                analytic = tensor.grad.ravel()[i]
                assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-9), name

    def test_loss_independent_parameter_zero_grad(self):
        params = tiny_params()
        fm = compress(rand_cube(np.random.default_rng(19)), params)
        loss = ad.tensor_mean(ad.mul(fm.tokens, fm.tokens))
        loss.backward()
        assert params.tensors["head.w"].grad is None
        assert params.tensors["compress.w"].grad is not None


class TestFusedFeatures:
    def test_matches_manual_chain(self):
        params = tiny_params()
        rng = np.random.default_rng(20)
        cubes = [rand_cube(rng) for _ in range(3)]
        feats = fused_features(cubes, params)
        f0 = compress(normalize_cube(cubes[0]), params)
        f1 = compress(normalize_cube(cubes[1]), params)
        np.testing.assert_allclose(
            feats[1].tokens.data[:, 8:], f1.tokens.data - f0.tokens.data, rtol=1e-12
        )
