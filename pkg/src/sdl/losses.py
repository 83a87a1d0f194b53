"""Training losses: Charbonnier reconstruction plus a frozen deep-feature term."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor


@dataclass
class LossConfig:
    alpha: float = 1.0
    beta: float = 0.1
    charbonnier_eps: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"loss weights must be non-negative: alpha={self.alpha}, beta={self.beta}")
        if self.charbonnier_eps <= 0:
            raise ValueError(f"charbonnier_eps must be positive, got {self.charbonnier_eps}")


def charbonnier(pred: Tensor, gt: Tensor, eps: float = 1e-6) -> Tensor:
    """Mean of sqrt((pred-gt)^2 + eps^2); smooth everywhere, floor eps."""
    if pred.shape != gt.shape:
        raise ValueError(f"charbonnier: shape mismatch {pred.shape} vs {gt.shape}")
    return ops.reduce_mean(ops.charb_atom(ops.sub(pred, gt), eps))


_EXTRACTOR_CHANNELS = (16, 32, 64, 128, 128)
_EXTRACTOR_SEED = 0x5D1


class FeatureExtractor:
    """Frozen, seeded random conv stack standing in for a pretrained network.

    Five stride-2 stages; the deepest maps are taken before the activation.
    Weights never require gradients, so the loss trains the prediction only.
    """

    def __init__(self, in_channels: int = 3, seed: int = _EXTRACTOR_SEED):
        rng = np.random.default_rng(seed)
        self.layers = []
        prev = in_channels
        for c in _EXTRACTOR_CHANNELS:
            std = math.sqrt(2.0 / (prev * 9))
            w = Tensor(rng.normal(0.0, std, size=(c, prev, 3, 3)).astype(np.float32))
            b = Tensor(np.zeros((1, c, 1, 1), np.float32))
            self.layers.append((w, b))
            prev = c

    def __call__(self, x: Tensor) -> Tensor:
        n_stages = len(self.layers)
        for i, (w, b) in enumerate(self.layers):
            if w.dtype != x.dtype:
                w, b = w.astype(x.dtype), b.astype(x.dtype)
            x = ops.conv2d(x, w, b, stride=2, padding=1)
            if i < n_stages - 1:
                x = ops.relu(x)
        return x


def feature_loss(pred: Tensor, gt: Tensor, extractor: FeatureExtractor) -> Tensor:
    """MSE between deepest pre-activation feature maps of pred and gt."""
    fp = extractor(pred)
    fg = extractor(gt)
    diff = ops.sub(fp, fg)
    return ops.reduce_mean(ops.mul(diff, diff))


_default_extractors: dict[int, FeatureExtractor] = {}


def default_extractor(in_channels: int = 3) -> FeatureExtractor:
    ext = _default_extractors.get(in_channels)
    if ext is None:
        ext = FeatureExtractor(in_channels)
        _default_extractors[in_channels] = ext
    return ext


def total_loss(pred: Tensor, gt: Tensor, cfg: LossConfig,
               extractor: FeatureExtractor | None = None) -> tuple[Tensor, float, float]:
    """alpha*charbonnier + beta*feature_loss; returns (loss, charb, feat) values."""
    charb = charbonnier(pred, gt, cfg.charbonnier_eps)
    loss = ops.scalar_mul(cfg.alpha, charb)
    feat_value = 0.0
    if cfg.beta > 0:
        if extractor is None:
            extractor = default_extractor(pred.shape[1])
        feat = feature_loss(pred, gt, extractor)
        feat_value = feat.item()
        loss = ops.add(loss, ops.scalar_mul(cfg.beta, feat))
    return loss, charb.item(), feat_value
