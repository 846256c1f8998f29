"""Prediction heads, task losses, and the two-clip evaluation rule."""

import math

import numpy as np
import pytest
import torch

from svfap.heads import PredictionHead, ce_loss, eval_clip_starts, mse_loss, \
    pool_and_predict, two_clip_inference


class TestPredictionHead:
    def test_pools_then_projects(self):
        torch.manual_seed(0)
        head = PredictionHead(8, 3).double()
        tokens = torch.randn(2, 5, 8, dtype=torch.float64)
        want = tokens.mean(dim=1) @ head.fc.weight.T.double() + head.fc.bias
        torch.testing.assert_close(head(tokens), want)

    def test_empty_sequence_rejected(self):
        head = PredictionHead(8, 3)
        with pytest.raises(ValueError, match="empty"):
            head(torch.randn(2, 0, 8))

    def test_bad_output_count(self):
        with pytest.raises(ValueError, match="positive"):
            PredictionHead(8, 0)

    def test_pool_and_predict_shares_the_pooling(self):
        head = torch.nn.Linear(4, 2)
        tokens = torch.randn(3, 6, 4)
        torch.testing.assert_close(pool_and_predict(tokens, head),
                                   head(tokens.mean(dim=1)))


class TestClassificationLoss:
    def test_uniform_logits_give_log_k(self):
        logits = torch.zeros(7)
        loss = ce_loss(logits, 3)
        assert loss.item() == pytest.approx(math.log(7.0), abs=1e-6)
        assert loss.item() == pytest.approx(1.945910, abs=1e-6)

    def test_confident_correct_prediction_is_cheap(self):
        logits = torch.tensor([100.0, 0.0, 0.0])
        assert ce_loss(logits, 0).item() == pytest.approx(0.0, abs=1e-6)

    def test_batched_mean(self):
        logits = torch.randn(4, 5)
        target = torch.tensor([0, 1, 2, 3])
        per_sample = torch.stack([ce_loss(logits[i], int(target[i]))
                                  for i in range(4)])
        torch.testing.assert_close(ce_loss(logits, target),
                                   per_sample.mean())

    def test_target_out_of_range(self):
        with pytest.raises(ValueError):
            ce_loss(torch.zeros(3), 3)

    def test_negative_target(self):
        with pytest.raises(ValueError):
            ce_loss(torch.zeros(3), -1)


class TestRegressionLoss:
    def test_matches_mean_square(self):
        pred = torch.randn(4, 2)
        target = torch.randn(4, 2)
        assert mse_loss(pred, target).item() == pytest.approx(
            ((pred - target) ** 2).mean().item(), rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(torch.randn(4, 2), torch.randn(4, 3))


class TestEvalClipStarts:
    def test_two_uniform_offsets(self):
        # span = (16 - 1) * 2 + 1 = 31 over 32 frames -> starts 0 and 1
        assert eval_clip_starts(32, 16, 2) == (0, 1)

    def test_video_equal_to_span(self):
        assert eval_clip_starts(16, 16, 1) == (0, 0)

    def test_short_video_clamps_to_zero(self):
        assert eval_clip_starts(8, 16, 1) == (0, 0)

    def test_long_video(self):
        assert eval_clip_starts(100, 16, 1) == (0, 84)

    def test_empty_video_rejected(self):
        with pytest.raises(ValueError):
            eval_clip_starts(0, 16, 1)


class TestTwoClipInference:
    def test_classification_averages_softmax(self):
        frames = np.zeros((20, 4, 4, 3))
        frames[:10] = 1.0  # the two windows see different content
        calls = []

        def predict(clip):
            calls.append(clip.mean())
            return np.array([clip.mean(), 1.0 - clip.mean()])

        out = two_clip_inference(frames, predict, clip_len=10, stride=1)
        assert len(calls) == 2
        logits = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        want = sum(np.exp(l) / np.exp(l).sum() for l in logits) / 2
        np.testing.assert_allclose(out, want, atol=1e-12)
        assert out.sum() == pytest.approx(1.0)

    def test_regression_averages_raw(self):
        frames = np.zeros((20, 2, 2, 3))
        frames[10:] = 3.0

        def predict(clip):
            return np.array([clip.mean()])

        out = two_clip_inference(frames, predict, clip_len=10, stride=1,
                                 classify=False)
        np.testing.assert_allclose(out, [1.5])

    def test_wrapping_short_video(self):
        frames = np.arange(6, dtype=float).reshape(6, 1, 1, 1)
        frames = np.repeat(frames, 3, axis=-1)
        seen = []

        def predict(clip):
            seen.append(clip[:, 0, 0, 0].copy())
            return np.array([0.0])

        two_clip_inference(frames, predict, clip_len=8, stride=1,
                           classify=False)
        np.testing.assert_array_equal(seen[0], [0, 1, 2, 3, 4, 5, 0, 1])
