import numpy as np
import pytest
import torch

from polypseg.core.exceptions import ShapeError, ValidationError
from polypseg.models.polyp_pvt import PredictionTriple
from polypseg.schemas.training import LossConfig
from polypseg.services.gradcheck import run_gradcheck
from polypseg.services.losses import (
    StructureLoss, pixel_weights, total_loss, weighted_bce, weighted_iou,
)


def _mask(size=16):
    mask = torch.zeros(1, 1, size, size, dtype=torch.float64)
    mask[..., 4:11, 3:9] = 1.0
    return mask


def _oracle_weights(mask: np.ndarray, window: int, gain: float) -> np.ndarray:
    """Window mean over in-image pixels, straight loops"""
    h, w = mask.shape
    r = window // 2
    pooled = np.zeros_like(mask)
    for i in range(h):
        for j in range(w):
            pooled[i, j] = mask[max(0, i - r):i + r + 1, max(0, j - r):j + r + 1].mean()
    return 1.0 + gain * np.abs(pooled - mask)


def _oracle_terms(logits: np.ndarray, mask: np.ndarray, weights: np.ndarray, eps: float = 1.0):
    p = 1.0 / (1.0 + np.exp(-logits))
    bce = -(mask * np.log(p) + (1 - mask) * np.log(1 - p))
    wbce = (weights * bce).sum() / weights.sum()
    inter = (weights * p * mask).sum()
    union = (weights * (p + mask - p * mask)).sum()
    return wbce, 1.0 - (inter + eps) / (union + eps)


class TestPixelWeights:
    def test_uniform_mask(self):
        w = pixel_weights(torch.zeros(1, 1, 8, 8), window=5)
        torch.testing.assert_close(w, torch.ones(1, 1, 8, 8))

    def test_matches_loop_oracle(self):
        mask = _mask()
        w = pixel_weights(mask, window=5, gain=5.0)
        expected = _oracle_weights(mask[0, 0].numpy(), 5, 5.0)
        np.testing.assert_allclose(w[0, 0].numpy(), expected, atol=1e-12)

    def test_boundary_heavier_than_interior(self):
        w = pixel_weights(_mask(), window=5)[0, 0]
        assert w[4, 3] > w[7, 5]
        assert w.min() >= 1.0

    def test_rejects_soft_mask(self):
        with pytest.raises(ValidationError):
            pixel_weights(torch.full((1, 1, 4, 4), 0.5))


class TestTerms:
    def test_direct_formula(self):
        mask = _mask()
        logits = torch.randn_like(mask)
        weights = pixel_weights(mask, window=5)
        wbce, wiou = _oracle_terms(logits[0, 0].numpy(), mask[0, 0].numpy(),
                                   weights[0, 0].numpy())
        assert float(weighted_bce(logits, mask, weights)) == pytest.approx(wbce, abs=1e-7)
        assert float(weighted_iou(logits, mask, weights)) == pytest.approx(wiou, abs=1e-7)

    def test_confident_correct_prediction(self):
        mask = _mask()
        logits = (mask * 2 - 1) * 30
        criterion = StructureLoss(LossConfig(weight_window=5))
        assert float(criterion(logits, mask)) == pytest.approx(0.0, abs=1e-6)

    def test_closer_prediction_scores_lower(self):
        mask = _mask()
        target = (mask * 2 - 1) * 10
        noise = torch.randn_like(mask)
        criterion = StructureLoss(LossConfig(weight_window=5))
        losses = [float(criterion((1 - t) * noise + t * target, mask))
                  for t in (0.0, 0.25, 0.5, 0.75, 1.0)]
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_batch_is_mean_of_images(self):
        masks = torch.cat([_mask(), torch.flip(_mask(), dims=[-1])])
        logits = torch.randn_like(masks)
        weights = pixel_weights(masks, window=5)
        batch = weighted_iou(logits, masks, weights)
        singles = [weighted_iou(logits[i:i + 1], masks[i:i + 1], weights[i:i + 1]) for i in range(2)]
        assert float(batch) == pytest.approx(float(sum(singles) / 2), abs=1e-12)

    def test_shape_mismatch(self):
        mask = _mask()
        with pytest.raises(ShapeError):
            weighted_bce(torch.zeros(1, 1, 8, 8, dtype=torch.float64), mask,
                         pixel_weights(mask, window=5))


class TestTotalLoss:
    def test_report_consistent(self):
        mask = _mask().float()
        pred = PredictionTriple(torch.randn_like(mask), torch.randn_like(mask), torch.zeros_like(mask))
        total, report = total_loss(pred, mask, LossConfig(weight_window=5))
        assert report.total == pytest.approx(float(total))
        assert report.total == pytest.approx(report.main + report.aux)
        assert report.main == pytest.approx(report.wbce_main + report.wiou_main)

    def test_main_term_is_p2(self):
        mask = _mask().float()
        good = (mask * 2 - 1) * 30
        bad = -good
        _, report = total_loss(PredictionTriple(bad, good, good + bad), mask,
                               LossConfig(weight_window=5))
        assert report.main < 1e-4 < report.aux

    def test_resolution_mismatch(self):
        mask = _mask().float()
        small = torch.zeros(1, 1, 8, 8)
        with pytest.raises(ShapeError):
            total_loss(PredictionTriple(small, small, small), mask)

    def test_nan_logits(self):
        mask = _mask().float()
        nan = torch.full_like(mask, float("nan"))
        with pytest.raises(ValidationError):
            total_loss(PredictionTriple(nan, nan, nan), mask, LossConfig(weight_window=5))

    def test_backward(self):
        mask = _mask().float()
        p1 = torch.randn_like(mask, requires_grad=True)
        p2 = torch.randn_like(mask, requires_grad=True)
        total, _ = total_loss(PredictionTriple(p1, p2, p1 + p2), mask, LossConfig(weight_window=5))
        total.backward()
        assert p1.grad is not None and torch.isfinite(p1.grad).all()
        assert p2.grad.abs().sum() > 0


def test_loss_gradients():
    report = run_gradcheck("losses", seed=0)
    assert report.passed
    assert report.results[0].max_error < 1e-3
