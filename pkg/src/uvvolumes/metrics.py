"""Image-quality metrics: PSNR and luminance SSIM."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

_LUMA = np.array([0.299, 0.587, 0.114])


def psnr(pred, target, max_val=1.0):
    """10 log10(max_val^2 / MSE) in dB; identical images report +inf."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _to_luminance(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ _LUMA
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


def ssim(pred, target, max_val=1.0):
    """Mean local SSIM over an 11x11 Gaussian window on luminance."""
    x = _to_luminance(pred)
    y = _to_luminance(target)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(
            f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    w = _gaussian_window()
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2

    mu_x = correlate(x, w, mode="reflect")
    mu_y = correlate(y, w, mode="reflect")
    xx = correlate(x * x, w, mode="reflect") - mu_x * mu_x
    yy = correlate(y * y, w, mode="reflect") - mu_y * mu_y
    xy = correlate(x * y, w, mode="reflect") - mu_x * mu_y

    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))
