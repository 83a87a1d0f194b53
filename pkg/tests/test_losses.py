import numpy as np
import pytest

from sdl.losses import (FeatureExtractor, LossConfig, charbonnier,
                        default_extractor, feature_loss, total_loss)
from sdl.tensor import Tape, Tensor, backward


def img(seed, shape=(1, 3, 16, 16)):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(0, 1, shape).astype(np.float32))


class TestCharbonnier:
    def test_identical_inputs_give_eps(self):
        x = img(0)
        assert charbonnier(x, x, 1e-3).item() == pytest.approx(1e-3, rel=1e-6)
        assert charbonnier(x, x, 1e-6).item() == pytest.approx(1e-6, rel=1e-6)

    def test_constant_difference(self):
        a = Tensor(np.full((1, 1, 4, 4), 3.0, np.float32))
        b = Tensor(np.zeros((1, 1, 4, 4), np.float32))
        # sqrt(9 + 1e-6) = 3.000000166666..., rounded to the nearest float32
        expected = float(np.float32(np.sqrt(9.0 + 1e-6)))
        assert charbonnier(a, b, 1e-3).item() == pytest.approx(expected, abs=2.5e-7)

    def test_symmetry(self):
        a, b = img(1), img(2)
        assert charbonnier(a, b).item() == charbonnier(b, a).item()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            charbonnier(img(0), img(0, (1, 3, 8, 8)))

    def test_bounded_below_by_eps(self):
        a, b = img(3), img(4)
        assert charbonnier(a, b, 1e-3).item() >= 1e-3


class TestLossConfig:
    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            LossConfig(alpha=-1.0)

    def test_zero_eps_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            LossConfig(charbonnier_eps=0.0)


class TestFeatureExtractor:
    def test_output_shape(self):
        ext = FeatureExtractor()
        out = ext(img(5, (1, 3, 64, 64)))
        assert out.shape == (1, 128, 2, 2)  # five stride-2 stages

    def test_seeded_and_cached(self):
        a = FeatureExtractor()
        b = FeatureExtractor()
        for (wa, _), (wb, _) in zip(a.layers, b.layers):
            np.testing.assert_array_equal(wa.data, wb.data)
        assert default_extractor(3) is default_extractor(3)

    def test_weights_stay_frozen(self):
        ext = FeatureExtractor()
        pred = img(6, (1, 3, 32, 32))
        pred.requires_grad = True
        with Tape() as tape:
            loss = feature_loss(pred, img(7, (1, 3, 32, 32)), ext)
        backward(loss, tape)
        assert pred.grad is not None
        for w, b in ext.layers:
            assert w.grad is None and b.grad is None

    def test_feature_loss_zero_on_identical(self):
        ext = FeatureExtractor()
        x = img(8, (1, 3, 32, 32))
        assert feature_loss(x, x, ext).item() == 0.0


class TestTotalLoss:
    def test_beta_zero_equals_charbonnier(self):
        pred, gt = img(9), img(10)
        cfg = LossConfig(alpha=1.0, beta=0.0)
        loss, cv, fv = total_loss(pred, gt, cfg)
        assert fv == 0.0
        assert loss.item() == pytest.approx(charbonnier(pred, gt).item(), rel=1e-7)
        assert cv == charbonnier(pred, gt).item()

    def test_weighted_sum(self):
        pred, gt = img(11, (1, 3, 32, 32)), img(12, (1, 3, 32, 32))
        cfg = LossConfig(alpha=1.0, beta=0.1)
        loss, cv, fv = total_loss(pred, gt, cfg)
        assert loss.item() == pytest.approx(cv + 0.1 * fv, rel=1e-5)
        assert fv > 0.0
