"""Image quality metrics."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(ref, test):
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ValueError(f"image shapes differ: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref, test, peak=1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical."""
    if not peak > 0:
        raise ValueError("peak must be positive")
    ref, test = _pair(ref, test)
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(ref, test, peak=1.0, window=SSIM_WINDOW) -> float:
    """Mean SSIM over all ``window`` x ``window`` patches (stride 1, uniform weights)."""
    ref, test = _pair(ref, test)
    if ref.ndim != 2:
        raise ValueError("ssim expects 2-D images")
    if min(ref.shape) < window:
        raise ValueError(f"image {ref.shape} smaller than the {window}x{window} window")
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    a = sliding_window_view(ref, (window, window))
    b = sliding_window_view(test, (window, window))
    mu_a = a.mean(axis=(-2, -1))
    mu_b = b.mean(axis=(-2, -1))
    da = a - mu_a[..., None, None]
    db = b - mu_b[..., None, None]
    var_a = (da * da).mean(axis=(-2, -1))
    var_b = (db * db).mean(axis=(-2, -1))
    cov = (da * db).mean(axis=(-2, -1))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def region_mae(ref, test, rows, cols) -> float:
    ref, test = _pair(ref, test)
    return float(np.mean(np.abs(ref[rows, cols] - test[rows, cols])))
