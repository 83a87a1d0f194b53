"""Evaluation metrics on images in [0,1]: PSNR and single-scale SSIM.

Both follow the 8-bit convention L=255 (inputs are scaled by 255 before the
statistics are taken).  PSNR of identical images is +inf.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_L = 255.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over all pixels and channels."""
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    diff = (np.asarray(a, np.float64) - np.asarray(b, np.float64)) * _L
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(_L / math.sqrt(mse))


def _gaussian_window() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) / 2.0
    x = np.arange(_SSIM_WINDOW, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * _SSIM_SIGMA * _SSIM_SIGMA))
    win = np.outer(g, g)
    return win / win.sum()


_WINDOW = _gaussian_window()


def _windowed_mean(img: np.ndarray) -> np.ndarray:
    win = sliding_window_view(img, (_SSIM_WINDOW, _SSIM_WINDOW))
    return np.tensordot(win, _WINDOW, axes=((2, 3), (0, 1)))


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    c1 = (_SSIM_K1 * _L) ** 2
    c2 = (_SSIM_K2 * _L) ** 2
    mu_x = _windowed_mean(x)
    mu_y = _windowed_mean(y)
    mu_xx = _windowed_mean(x * x)
    mu_yy = _windowed_mean(y * y)
    mu_xy = _windowed_mean(x * y)
    var_x = mu_xx - mu_x * mu_x
    var_y = mu_yy - mu_y * mu_y
    cov = mu_xy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM with an 11x11 Gaussian window, averaged across channels."""
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ValueError(f"ssim expects (C,H,W) or (H,W) images, got shape {a.shape}")
    _, h, w = a.shape
    if h < _SSIM_WINDOW or w < _SSIM_WINDOW:
        raise ValueError(f"ssim requires H,W >= {_SSIM_WINDOW}, got ({h},{w})")
    ax = np.asarray(a, np.float64) * _L
    bx = np.asarray(b, np.float64) * _L
    return float(np.mean([_ssim_channel(ax[c], bx[c]) for c in range(ax.shape[0])]))
