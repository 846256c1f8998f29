"""Encoder stages: downsampling operators, spatial attention, the three-stage
pyramid, masked-mode shapes, fusion, and variant structure."""

import dataclasses
import math

import numpy as np
import pytest
import torch

from svfap.encoder import BottleneckStage, SpatialAttention, StandardStage, \
    TemporalDownsample, TPSBTEncoder, temporal_upsample
from svfap.masking import make_tube_mask

from test_layers import gelu_np


class TestTemporalDownsample:
    def test_avg_oracle(self):
        module = TemporalDownsample(4, 2, mode="avg")
        x = torch.randn(2, 6, 3, 4)
        out = module(x)
        want = (x[:, 0::2] + x[:, 1::2]) / 2
        torch.testing.assert_close(out, want)

    def test_max_oracle(self):
        module = TemporalDownsample(4, 2, mode="max")
        x = torch.randn(2, 6, 3, 4)
        want = torch.maximum(x[:, 0::2], x[:, 1::2])
        torch.testing.assert_close(module(x), want)

    def test_conv_matches_manual_window(self):
        module = TemporalDownsample(3, 2, mode="conv").double()
        x = torch.randn(1, 4, 2, 3, dtype=torch.float64)
        out = module(x)
        w = module.op.weight  # (C_out, C_in, k)
        b = module.op.bias
        # first output slice at spatial position 0
        window = x[0, 0:2, 0]                     # (k, C_in)
        want = torch.einsum("oik,ki->o", w, window) + b
        torch.testing.assert_close(out[0, 0, 0], want)

    def test_halves_temporal_axis_only(self):
        module = TemporalDownsample(8, 2)
        assert module(torch.randn(2, 4, 5, 8)).shape == (2, 2, 5, 8)

    def test_indivisible_length_rejected(self):
        module = TemporalDownsample(8, 2)
        with pytest.raises(ValueError, match="divisible"):
            module(torch.randn(2, 5, 5, 8))

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            TemporalDownsample(8, 2, mode="median")


class TestTemporalUpsample:
    def test_repeats_slices(self):
        x = torch.arange(12.0).reshape(1, 3, 2, 2)
        out = temporal_upsample(x, 2)
        assert out.shape == (1, 6, 2, 2)
        torch.testing.assert_close(out[0, 0], x[0, 0])
        torch.testing.assert_close(out[0, 1], x[0, 0])
        torch.testing.assert_close(out[0, 2], x[0, 1])

    def test_factor_one_is_identity(self):
        x = torch.randn(1, 3, 2, 2)
        assert temporal_upsample(x, 1) is x

    def test_inverts_avg_downsample_on_constant_slices(self):
        x = torch.randn(1, 2, 3, 4).repeat_interleave(2, dim=1)
        down = TemporalDownsample(4, 2, mode="avg")(x)
        torch.testing.assert_close(temporal_upsample(down, 2), x)

    def test_bad_factor(self):
        with pytest.raises(ValueError, match="factor"):
            temporal_upsample(torch.randn(1, 2, 2, 2), 0)


class TestSpatialAttention:
    def _oracle(self, module, x, normalize):
        w1 = module.fc1.weight.detach().numpy()
        b1 = module.fc1.bias.detach().numpy()
        w2 = module.fc2.weight.detach().numpy()
        b2 = module.fc2.bias.detach().numpy()
        scores = gelu_np(x @ w1.T + b1) @ w2.T + b2   # (T, S, G)
        if normalize:
            e = np.exp(scores - scores.max(axis=-2, keepdims=True))
            scores = e / e.sum(axis=-2, keepdims=True)
        # z = X^T Y per slice, reported as (T, G, C)
        return np.einsum("tsc,tsg->tgc", x, scores)

    def test_matches_oracle(self):
        torch.manual_seed(0)
        module = SpatialAttention(6, 2).double()
        x = torch.randn(3, 5, 6, dtype=torch.float64)
        want = self._oracle(module, x.numpy(), normalize=False)
        np.testing.assert_allclose(module(x).detach().numpy(), want,
                                   atol=1e-12)

    def test_normalized_variant(self):
        torch.manual_seed(1)
        module = SpatialAttention(6, 2, normalize=True).double()
        x = torch.randn(3, 5, 6, dtype=torch.float64)
        want = self._oracle(module, x.numpy(), normalize=True)
        np.testing.assert_allclose(module(x).detach().numpy(), want,
                                   atol=1e-12)

    def test_score_network_width(self):
        module = SpatialAttention(8, 3)
        assert module.fc1.out_features == 32
        assert module.fc2.out_features == 3

    def test_output_shape(self):
        module = SpatialAttention(8, 3)
        assert module(torch.randn(2, 4, 10, 8)).shape == (2, 4, 3, 8)


class TestStages:
    def test_standard_stage_attends_across_slices(self):
        torch.manual_seed(2)
        stage = StandardStage(8, 2, depth=1).double()
        x = torch.randn(1, 4, 2, 8, dtype=torch.float64,
                        requires_grad=True)
        out = stage(x)
        out[0, 0].sum().backward()
        # gradient reaches the last temporal slice through joint attention
        assert x.grad[0, 3].abs().max() > 0

    def test_bottleneck_stage_shapes(self):
        stage = BottleneckStage(8, 2, depth=2, num_tokens=3)
        x = torch.randn(2, 4, 5, 8)
        assert stage(x).shape == (2, 4, 5, 8)

    def test_bottleneck_stage_block_count(self):
        stage = BottleneckStage(8, 2, depth=3, num_tokens=2)
        assert len(stage.blocks) == 2  # depth - 1 bottleneck blocks
        assert stage.reverse is not None


class TestEncoderForward:
    def test_finetune_shapes(self, tiny_arch):
        enc = TPSBTEncoder(tiny_arch)
        patches = torch.randn(2, tiny_arch.num_tokens, tiny_arch.patch_dim)
        out = enc(patches)
        # stage 3 output: one slice of 16 spatial tokens
        assert out.shape == (2, 16, 32)

    def test_return_stages_token_counts(self, tiny_arch):
        enc = TPSBTEncoder(tiny_arch)
        patches = torch.randn(1, tiny_arch.num_tokens, tiny_arch.patch_dim)
        x1, x2, x3, out = enc(patches, return_stages=True)
        assert x1.shape[1] == 64
        assert x2.shape[1] == 32
        assert x3.shape[1] == 16
        torch.testing.assert_close(out, x3)

    def test_masked_mode_fused_shapes(self, tiny_arch):
        enc = TPSBTEncoder(tiny_arch)
        rng = np.random.default_rng(0)
        mask = make_tube_mask(tiny_arch.grid, tiny_arch.masking_ratio, rng)
        patches = torch.randn(2, tiny_arch.num_tokens, tiny_arch.patch_dim)
        out = enc(patches, mask)
        # 2 visible spatial tokens per slice, fused back to 4 slices
        assert out.shape == (2, 8, 32)

    def test_fusion_is_sum_of_upsampled_stages(self, tiny_arch):
        enc = TPSBTEncoder(tiny_arch)
        rng = np.random.default_rng(1)
        mask = make_tube_mask(tiny_arch.grid, tiny_arch.masking_ratio, rng)
        patches = torch.randn(1, tiny_arch.num_tokens, tiny_arch.patch_dim)
        x1, x2, x3, fused = enc(patches, mask, return_stages=True,
                                fused=True)
        s = x1.shape[1] // tiny_arch.grid[0]
        as_grid = lambda x: x.reshape(1, -1, s, x.shape[-1])
        want = as_grid(x1) + temporal_upsample(as_grid(x2), 2) \
            + temporal_upsample(as_grid(x3), 4)
        torch.testing.assert_close(fused.reshape(want.shape), want)

    def test_mask_batch_mismatch(self, tiny_arch):
        enc = TPSBTEncoder(tiny_arch)
        rng = np.random.default_rng(2)
        masks = [make_tube_mask(tiny_arch.grid, 0.9, rng)]
        patches = torch.randn(2, tiny_arch.num_tokens, tiny_arch.patch_dim)
        with pytest.raises(ValueError, match="masks"):
            enc(patches, masks)

    def test_mask_grid_mismatch(self, tiny_arch):
        enc = TPSBTEncoder(tiny_arch)
        rng = np.random.default_rng(3)
        mask = make_tube_mask((2, 4, 4), 0.5, rng)
        patches = torch.randn(1, tiny_arch.num_tokens, tiny_arch.patch_dim)
        with pytest.raises(ValueError, match="grid"):
            enc(patches, mask)

    def test_bad_rank_rejected(self, tiny_arch):
        enc = TPSBTEncoder(tiny_arch)
        with pytest.raises(ValueError, match="batch"):
            enc(torch.randn(tiny_arch.num_tokens, tiny_arch.patch_dim))

    def test_cross_slice_information_flow(self, tiny_arch):
        torch.manual_seed(3)
        enc = TPSBTEncoder(tiny_arch).double()
        patches = torch.randn(1, tiny_arch.num_tokens, tiny_arch.patch_dim,
                              dtype=torch.float64, requires_grad=True)
        out = enc(patches)
        out[0, 0].sum().backward()
        spatial = tiny_arch.spatial_tokens
        last_slice = patches.grad[0, -spatial:]
        assert last_slice.abs().max() > 0


class TestVariants:
    def test_vit_baseline_has_no_downsampling(self, tiny_arch):
        enc = TPSBTEncoder(tiny_arch, variant="vit_baseline")
        assert len(enc.downsamples) == 0
        assert all(isinstance(s, StandardStage) for s in enc.stages)
        patches = torch.randn(1, tiny_arch.num_tokens, tiny_arch.patch_dim)
        # all stages keep the full temporal resolution
        assert enc(patches).shape == (1, 64, 32)

    def test_tp_only_keeps_downsampling(self, tiny_arch):
        enc = TPSBTEncoder(tiny_arch, variant="tp_only")
        assert len(enc.downsamples) == 2
        assert all(isinstance(s, StandardStage) for s in enc.stages)
        patches = torch.randn(1, tiny_arch.num_tokens, tiny_arch.patch_dim)
        assert enc(patches).shape == (1, 16, 32)

    def test_sbt_only_keeps_bottlenecks(self, tiny_arch):
        enc = TPSBTEncoder(tiny_arch, variant="sbt_only")
        assert len(enc.downsamples) == 0
        assert isinstance(enc.stages[0], StandardStage)
        assert isinstance(enc.stages[1], BottleneckStage)
        patches = torch.randn(1, tiny_arch.num_tokens, tiny_arch.patch_dim)
        assert enc(patches).shape == (1, 64, 32)

    def test_full_structure(self, tiny_arch):
        enc = TPSBTEncoder(tiny_arch)
        assert isinstance(enc.stages[0], StandardStage)
        assert isinstance(enc.stages[1], BottleneckStage)
        assert isinstance(enc.stages[2], BottleneckStage)
        assert sorted(enc.downsamples.keys()) == ["2", "3"]

    def test_downsample_mode_plumbing(self, tiny_arch):
        enc = TPSBTEncoder(tiny_arch, downsample="avg")
        assert all(d.mode == "avg" for d in enc.downsamples.values())


class TestEncoderGradients:
    def test_full_tiny_encoder_finite_differences(self, grad_arch):
        from test_layers import finite_difference_check
        torch.manual_seed(4)
        enc = TPSBTEncoder(grad_arch)
        patches = torch.randn(1, grad_arch.num_tokens, grad_arch.patch_dim)
        finite_difference_check(enc, [patches], max_coords=6)
