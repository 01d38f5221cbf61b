import numpy as np
import pytest

import doubleseg.tensor as T
from doubleseg.encoders import (
    EncoderConfig,
    FeaturePyramid,
    InvertedResidual,
    ResidualBlock,
    DualPathBlock,
    build_encoder,
)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def _zero_conv_weights(layer):
    for _, p in layer.named_params():
        p.data[...] = 0.0 if p.data.ndim == 4 and p.data.shape[2:] != (1, 1) else p.data
    # zero every conv kernel including 1x1, keep norm gamma/beta at init
    for name, p in layer.named_params():
        if name.endswith("conv.w"):
            p.data[...] = 0.0


class TestInvertedResidual:
    def test_stride1_shortcut_present(self, rng):
        block = InvertedResidual(rng, 8, 8, expansion=4, stride=1)
        assert block.use_shortcut
        x = T.Tensor(rng.standard_normal((2, 8, 8, 8)).astype(np.float32))
        out = block(x)
        path = block.project(block.depthwise(block.expand(x)))
        assert np.allclose(out.data, path.data + x.data, atol=1e-6)

    def test_stride2_no_shortcut_halves(self, rng):
        block = InvertedResidual(rng, 8, 16, expansion=4, stride=2)
        assert not block.use_shortcut
        x = T.Tensor(rng.standard_normal((1, 8, 8, 12)).astype(np.float32))
        out = block(x)
        assert out.shape == (1, 16, 4, 6)

    def test_param_count_closed_form(self, rng):
        width, e = 8, 4
        block = InvertedResidual(rng, width, width, expansion=e, stride=1)
        ce = width * e
        expected = (width * ce + 2 * ce          # expand 1x1 + its norm
                    + ce * 9 + 2 * ce            # depthwise 3x3 + its norm
                    + ce * width + 2 * width)    # project 1x1 + its norm
        assert block.param_count() == expected == 944

    def test_no_activation_after_projection(self, rng):
        # projection output can be negative; a trailing relu would clamp it
        block = InvertedResidual(rng, 4, 4, expansion=2, stride=1)
        x = T.Tensor(rng.standard_normal((4, 4, 8, 8)).astype(np.float32))
        path = block.project(block.depthwise(block.expand(x)))
        assert path.data.min() < 0


class TestResidualBlock:
    def test_zero_branch_passes_shortcut(self, rng):
        block = ResidualBlock(rng, 8, 8, stride=1)
        block.conv1.conv.w.data[...] = 0.0
        block.conv2.conv.w.data[...] = 0.0
        x = T.Tensor(rng.standard_normal((2, 8, 6, 6)).astype(np.float32))
        out = block(x)
        assert np.array_equal(out.data, np.maximum(x.data, 0.0))

    def test_stride2_halves(self, rng):
        block = ResidualBlock(rng, 8, 16, stride=2)
        x = T.Tensor(rng.standard_normal((1, 8, 10, 14)).astype(np.float32))
        assert block(x).shape == (1, 16, 5, 7)

    def test_gradient_flows_through_zeroed_branch(self, rng):
        block = ResidualBlock(rng, 4, 4, stride=1)
        block.conv1.conv.w.data[...] = 0.0
        block.conv2.conv.w.data[...] = 0.0
        x = T.Tensor(rng.standard_normal((1, 4, 6, 6)).astype(np.float32),
                     requires_grad=True)
        with T.Tape() as tape:
            out = block(x)
            loss = T.weighted_sum(out, np.ones(out.shape))
        tape.backward(loss)
        assert x.grad is not None and np.abs(x.grad).max() > 0


class TestDualPathBlock:
    def test_dense_growth_is_linear(self, rng):
        res = T.Tensor(rng.standard_normal((1, 8, 6, 6)).astype(np.float32))
        dense = T.Tensor(rng.standard_normal((1, 2, 6, 6)).astype(np.float32))
        inc = 2
        for k in range(1, 4):
            block = DualPathBlock(rng, 8, dense.shape[1], 8, inc, stride=1)
            res, dense = block(res, dense)
            assert res.shape[1] == 8          # residual width constant
            assert dense.shape[1] == 2 + k * inc

    def test_zero_transform_is_identity_on_res(self, rng):
        block = DualPathBlock(rng, 8, 4, 8, 2, stride=1)
        for name, p in block.named_params():
            if name.endswith("conv.w"):
                p.data[...] = 0.0
        x_res = T.Tensor(rng.standard_normal((2, 8, 5, 5)).astype(np.float32))
        x_dense = T.Tensor(rng.standard_normal((2, 4, 5, 5)).astype(np.float32))
        res, dense = block(x_res, x_dense)
        assert np.array_equal(res.data, x_res.data)
        assert np.array_equal(dense.data[:, :4], x_dense.data)
        assert np.array_equal(dense.data[:, 4:], np.zeros((2, 2, 5, 5), np.float32))

    def test_stream_shape_mismatch_rejected(self, rng):
        block = DualPathBlock(rng, 8, 4, 8, 2, stride=1)
        x_res = T.Tensor(np.zeros((1, 8, 5, 5), np.float32))
        x_dense = T.Tensor(np.zeros((1, 4, 6, 5), np.float32))
        with pytest.raises(T.ShapeError, match="dual-path"):
            block(x_res, x_dense)


class TestEncode:
    def test_halving_shape_law(self, rng):
        cfg = EncoderConfig(family="res_like", stages=4)
        enc = build_encoder(cfg, rng)
        x = T.Tensor(rng.random((1, 3, 64, 80)).astype(np.float32))
        pyr = enc.encode(x)
        dims = [(lvl.shape[2], lvl.shape[3]) for lvl in pyr.levels]
        assert dims == [(64, 80), (32, 40), (16, 20), (8, 10)]
        assert pyr.channels == enc.level_channels

    def test_four_input_channels_accepted(self, rng):
        cfg = EncoderConfig(family="res_like", in_channels=4)
        enc = build_encoder(cfg, rng)
        x = T.Tensor(rng.random((1, 4, 16, 16)).astype(np.float32))
        assert len(enc.encode(x)) == 4

    def test_families_share_spatial_shapes(self, rng):
        x = rng.random((1, 3, 32, 40)).astype(np.float32)
        shapes = []
        for family in ("mobile_like", "res_like", "dpn_like"):
            enc = build_encoder(EncoderConfig(family=family), np.random.default_rng(1))
            pyr = enc.encode(T.Tensor(x))
            shapes.append([(lvl.shape[2], lvl.shape[3]) for lvl in pyr.levels])
        assert shapes[0] == shapes[1] == shapes[2]

    def test_indivisible_input_rejected_with_padding_hint(self, rng):
        enc = build_encoder(EncoderConfig(family="mobile_like", stages=4), rng)
        x = T.Tensor(np.zeros((1, 3, 30, 40), np.float32))
        with pytest.raises(T.ShapeError, match="pad"):
            enc.encode(x)

    @pytest.mark.parametrize("family", ["mobile_like", "res_like", "dpn_like"])
    def test_gradient_reaches_every_level(self, rng, family):
        enc = build_encoder(EncoderConfig(family=family), rng)
        x = T.Tensor(rng.random((1, 3, 16, 16)).astype(np.float32),
                     requires_grad=True)
        with T.Tape() as tape:
            pyr = enc.encode(x)
            deepest = pyr.levels[-1]
            loss = T.weighted_sum(deepest, np.ones(deepest.shape))
        tape.backward(loss)
        assert x.grad is not None and np.abs(x.grad).max() > 0

    def test_encode_deterministic_given_weights(self, rng):
        enc = build_encoder(EncoderConfig(family="dpn_like"), rng)
        x = rng.random((1, 3, 16, 16)).astype(np.float32)
        enc.set_training(False)
        a = enc.encode(T.Tensor(x)).levels[-1].data
        b = enc.encode(T.Tensor(x)).levels[-1].data
        assert np.array_equal(a, b)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="family"):
            EncoderConfig(family="vgg_like")
        with pytest.raises(ValueError, match="in_channels"):
            EncoderConfig(in_channels=5)
        with pytest.raises(ValueError, match="stages"):
            EncoderConfig(stages=1)

    def test_pyramid_invariant_enforced(self, rng):
        good = T.Tensor(np.zeros((1, 4, 8, 8), np.float32))
        bad = T.Tensor(np.zeros((1, 4, 5, 4), np.float32))
        with pytest.raises(T.ShapeError, match="pyramid"):
            FeaturePyramid([good, bad])
