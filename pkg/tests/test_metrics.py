"""Image quality metrics: PSNR and SSIM."""

import numpy as np
import pytest

from uvvolumes.metrics import psnr, ssim


def test_psnr_known_value():
    a = np.zeros((8, 8, 3))
    b = np.full((8, 8, 3), 0.1)
    # MSE = 0.01 -> PSNR = -10 log10(0.01) = 20 dB.
    assert abs(psnr(a, b) - 20.0) < 1e-12


def test_psnr_identical_is_infinite():
    a = np.random.default_rng(0).uniform(size=(4, 4, 3))
    assert psnr(a, a.copy()) == np.inf


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(1)
    a = rng.uniform(0.2, 0.8, (16, 16, 3))
    prev = np.inf
    for eps in (0.01, 0.05, 0.2):
        val = psnr(a, np.clip(a + eps, 0, 1))
        assert val < prev
        prev = val


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


def test_ssim_self_is_one():
    img = np.random.default_rng(2).uniform(size=(32, 32, 3))
    assert abs(ssim(img, img.copy()) - 1.0) < 1e-9


def test_ssim_decreases_with_noise():
    rng = np.random.default_rng(3)
    a = rng.uniform(0.2, 0.8, (32, 32, 3))
    low = ssim(a, np.clip(a + rng.normal(0, 0.02, a.shape), 0, 1))
    high = ssim(a, np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1))
    assert high < low < 1.0
    assert -1.0 <= high <= 1.0


def test_ssim_constant_shift_less_sensitive_than_noise():
    # A global luminance shift should score higher than structure-destroying
    # noise of comparable magnitude.
    rng = np.random.default_rng(4)
    a = rng.uniform(0.3, 0.7, (32, 32, 3))
    shifted = np.clip(a + 0.05, 0, 1)
    noisy = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    assert ssim(a, shifted) > ssim(a, noisy)


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))
